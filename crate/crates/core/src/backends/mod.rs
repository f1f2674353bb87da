//! Chat-completion and embedding providers.
//!
//! [`ChatBackend`] and [`Embedder`] are the two seams the engine talks to.
//! [`http`] speaks the OpenAI-compatible wire protocol; [`mock`] provides
//! deterministic stand-ins for tests and offline runs.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::ChatMessage;

pub mod http;
pub mod mock;

pub use http::{HttpBackend, HttpSettings};
pub use mock::{mock_embed, prompt_key, MockChat, MockEmbedder};

pub const DEFAULT_EMBEDDING_DIM: usize = 1536;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("backend unavailable after {attempts} attempt(s): {message}")]
    Unavailable { attempts: u32, message: String },
    #[error("backend rejected the request (HTTP {status}): {message}")]
    Rejected { status: u16, message: String },
    #[error("malformed backend response: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChatParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub seed: u64,
}

impl Default for ChatParams {
    fn default() -> Self {
        ChatParams { temperature: 0.0, top_p: 1.0, max_tokens: 1000, seed: 1 }
    }
}

impl ChatParams {
    pub fn validate(&self) -> Result<(), BackendError> {
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(BackendError::InvalidInput(format!("temperature {} must be >= 0", self.temperature)));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(BackendError::InvalidInput(format!("top_p {} must be in (0, 1]", self.top_p)));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::InvalidInput("max_tokens must be at least 1".into()));
        }
        Ok(())
    }
}

/// A dense embedding. Entries are always finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, BackendError> {
        if values.is_empty() {
            return Err(BackendError::InvalidInput("embedding has no components".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(BackendError::InvalidInput("embedding has a non-finite component".into()));
        }
        Ok(EmbeddingVector(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageCounters {
    pub chat_calls: u64,
    pub embed_calls: u64,
    pub embed_texts: u64,
}

/// Atomic usage counters shared by a backend and its callers.
#[derive(Debug, Default)]
pub struct UsageMeter {
    chat_calls: AtomicU64,
    embed_calls: AtomicU64,
    embed_texts: AtomicU64,
}

impl UsageMeter {
    pub fn record_chat(&self) {
        self.chat_calls.fetch_add(1, Ordering::SeqCst);
    }

    pub fn record_embed(&self, texts: usize) {
        self.embed_calls.fetch_add(1, Ordering::SeqCst);
        self.embed_texts.fetch_add(texts as u64, Ordering::SeqCst);
    }

    pub fn snapshot(&self) -> UsageCounters {
        UsageCounters {
            chat_calls: self.chat_calls.load(Ordering::SeqCst),
            embed_calls: self.embed_calls.load(Ordering::SeqCst),
            embed_texts: self.embed_texts.load(Ordering::SeqCst),
        }
    }
}

pub trait ChatBackend: Send + Sync {
    /// One completion. Counts exactly one chat call, successful or not.
    fn chat_complete(&self, messages: &[ChatMessage], params: &ChatParams) -> Result<String, BackendError>;

    fn usage(&self) -> UsageCounters;
}

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;

    /// One vector per input text, in order. Counts one embed call.
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError>;

    fn usage(&self) -> UsageCounters;
}

impl<T: ChatBackend + ?Sized> ChatBackend for &T {
    fn chat_complete(&self, messages: &[ChatMessage], params: &ChatParams) -> Result<String, BackendError> {
        (**self).chat_complete(messages, params)
    }

    fn usage(&self) -> UsageCounters {
        (**self).usage()
    }
}

impl<T: Embedder + ?Sized> Embedder for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError> {
        (**self).embed_batch(texts)
    }

    fn usage(&self) -> UsageCounters {
        (**self).usage()
    }
}

pub(crate) fn check_messages(messages: &[ChatMessage]) -> Result<(), BackendError> {
    if messages.is_empty() {
        return Err(BackendError::InvalidInput("no messages".into()));
    }
    Ok(())
}

pub(crate) fn check_texts(texts: &[String]) -> Result<(), BackendError> {
    if texts.is_empty() {
        return Err(BackendError::InvalidInput("no texts to embed".into()));
    }
    if let Some(pos) = texts.iter().position(|t| t.is_empty()) {
        return Err(BackendError::InvalidInput(format!("text {pos} is empty")));
    }
    Ok(())
}

/// Wraps a backend with its own counters, e.g. to account a single question.
pub struct Metered<B> {
    inner: B,
    meter: UsageMeter,
}

impl<B> Metered<B> {
    pub fn new(inner: B) -> Self {
        Metered { inner, meter: UsageMeter::default() }
    }

    pub fn counters(&self) -> UsageCounters {
        self.meter.snapshot()
    }
}

impl<B: ChatBackend> ChatBackend for Metered<B> {
    fn chat_complete(&self, messages: &[ChatMessage], params: &ChatParams) -> Result<String, BackendError> {
        self.meter.record_chat();
        self.inner.chat_complete(messages, params)
    }

    fn usage(&self) -> UsageCounters {
        self.meter.snapshot()
    }
}

impl<B: Embedder> Embedder for Metered<B> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError> {
        self.meter.record_embed(texts.len());
        self.inner.embed_batch(texts)
    }

    fn usage(&self) -> UsageCounters {
        self.meter.snapshot()
    }
}
