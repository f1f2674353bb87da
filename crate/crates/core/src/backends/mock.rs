//! Deterministic mock backends.
//!
//! [`MockChat`] answers from a script keyed by the SHA-256 of the full
//! prompt (see [`prompt_key`]) and echoes the last user turn otherwise.
//! [`MockEmbedder`] maps token-normalized text to a pseudorandom unit vector
//! seeded from a stable hash, so equal texts always get equal vectors.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::Mutex;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{check_messages, check_texts, BackendError, ChatBackend, ChatParams, Embedder, EmbeddingVector, UsageCounters, UsageMeter};
use crate::chain::{ChatMessage, PromptText, Role};
use crate::scoring::tokenize;

/// Hex SHA-256 over the prompt rendered as `role\ncontent\n` per message.
pub fn prompt_key(messages: &[ChatMessage]) -> String {
    let mut hasher = Sha256::new();
    for m in messages {
        let role = match m.role {
            Role::System => "system",
            Role::User => "user",
        };
        hasher.update(role.as_bytes());
        hasher.update(b"\n");
        hasher.update(m.content.as_bytes());
        hasher.update(b"\n");
    }
    hex::encode(hasher.finalize())
}

#[derive(Default)]
pub struct MockChat {
    script: HashMap<String, String>,
    failure: Option<BackendError>,
    history: Mutex<Vec<Vec<ChatMessage>>>,
    meter: UsageMeter,
}

impl MockChat {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_script(script: HashMap<String, String>) -> Self {
        MockChat { script, ..Self::default() }
    }

    /// Loads a JSON object of `{prompt_sha256_hex: reply}`.
    pub fn from_script_file(path: &Path) -> Result<Self, BackendError> {
        let text = fs::read_to_string(path)
            .map_err(|e| BackendError::InvalidInput(format!("cannot read mock script {}: {e}", path.display())))?;
        let script: HashMap<String, String> = serde_json::from_str(&text)
            .map_err(|e| BackendError::InvalidInput(format!("bad mock script {}: {e}", path.display())))?;
        Ok(Self::from_script(script))
    }

    /// A backend whose every call fails with `error`.
    pub fn failing(error: BackendError) -> Self {
        MockChat { failure: Some(error), ..Self::default() }
    }

    pub fn insert(&mut self, messages: &[ChatMessage], reply: impl Into<String>) {
        self.script.insert(prompt_key(messages), reply.into());
    }

    pub fn insert_prompt(&mut self, prompt: &PromptText, reply: impl Into<String>) {
        self.insert(&prompt.role_messages, reply);
    }

    pub fn script(&self) -> &HashMap<String, String> {
        &self.script
    }

    /// Every prompt received so far, in call order.
    pub fn history(&self) -> Vec<Vec<ChatMessage>> {
        self.history.lock().unwrap().clone()
    }
}

impl ChatBackend for MockChat {
    fn chat_complete(&self, messages: &[ChatMessage], params: &ChatParams) -> Result<String, BackendError> {
        self.meter.record_chat();
        check_messages(messages)?;
        params.validate()?;
        self.history.lock().unwrap().push(messages.to_vec());
        if let Some(err) = &self.failure {
            return Err(err.clone());
        }
        if let Some(reply) = self.script.get(&prompt_key(messages)) {
            return Ok(reply.clone());
        }
        Ok(messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .unwrap_or(&messages[messages.len() - 1])
            .content
            .clone())
    }

    fn usage(&self) -> UsageCounters {
        self.meter.snapshot()
    }
}

/// Unit vector in `dim` dimensions derived only from the tokens of `text`.
pub fn mock_embed(text: &str, dim: usize) -> EmbeddingVector {
    assert!(dim >= 8, "mock embedding dimension must be at least 8");
    let normalized = tokenize(text).tokens.join(" ");
    let digest = Sha256::digest(normalized.as_bytes());
    let seed = u64::from_le_bytes(digest[..8].try_into().unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values: Vec<f64> = (0..dim)
        .map(|_| {
            let unit = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
            2.0 * unit - 1.0
        })
        .collect();
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        values[0] = 1.0;
    } else {
        values.iter_mut().for_each(|v| *v /= norm);
    }
    EmbeddingVector(values)
}

pub struct MockEmbedder {
    dim: usize,
    overrides: HashMap<String, EmbeddingVector>,
    failure: Option<BackendError>,
    meter: UsageMeter,
}

impl MockEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 8, "mock embedding dimension must be at least 8");
        MockEmbedder { dim, overrides: HashMap::new(), failure: None, meter: UsageMeter::default() }
    }

    pub fn failing(dim: usize, error: BackendError) -> Self {
        MockEmbedder { failure: Some(error), ..Self::new(dim) }
    }

    /// Pins the vector returned for exactly `text`.
    pub fn set_vector(&mut self, text: impl Into<String>, values: Vec<f64>) -> Result<(), BackendError> {
        if values.len() != self.dim {
            return Err(BackendError::InvalidInput(format!(
                "override has dimension {}, embedder has {}",
                values.len(),
                self.dim
            )));
        }
        self.overrides.insert(text.into(), EmbeddingVector::new(values)?);
        Ok(())
    }

    pub fn embed_one(&self, text: &str) -> EmbeddingVector {
        self.overrides.get(text).cloned().unwrap_or_else(|| mock_embed(text, self.dim))
    }
}

impl Embedder for MockEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError> {
        self.meter.record_embed(texts.len());
        check_texts(texts)?;
        if let Some(err) = &self.failure {
            return Err(err.clone());
        }
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }

    fn usage(&self) -> UsageCounters {
        self.meter.snapshot()
    }
}
