//! OpenAI-compatible HTTP backend (`/v1/chat/completions`, `/v1/embeddings`).

use std::thread;
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    check_messages, check_texts, BackendError, ChatBackend, ChatParams, Embedder, EmbeddingVector, UsageCounters,
    UsageMeter, DEFAULT_EMBEDDING_DIM,
};
use crate::chain::ChatMessage;

pub const API_KEY_ENV: &str = "COA_API_KEY";
pub const API_BASE_ENV: &str = "COA_API_BASE";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpSettings {
    pub base_url: String,
    pub api_key: Option<String>,
    pub chat_model: String,
    pub embedding_model: String,
    pub embedding_dim: usize,
    pub timeout: Duration,
    pub max_attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for HttpSettings {
    fn default() -> Self {
        HttpSettings {
            base_url: "https://api.openai.com".into(),
            api_key: None,
            chat_model: "gpt-3.5-turbo".into(),
            embedding_model: "text-embedding-ada-002".into(),
            embedding_dim: DEFAULT_EMBEDDING_DIM,
            timeout: Duration::from_secs(30),
            max_attempts: 3,
            initial_backoff: Duration::from_millis(500),
        }
    }
}

impl HttpSettings {
    /// Applies `COA_API_BASE` and `COA_API_KEY` when set.
    pub fn with_env_overrides(mut self) -> Self {
        if let Ok(base) = std::env::var(API_BASE_ENV) {
            if !base.trim().is_empty() {
                self.base_url = base.trim().to_string();
            }
        }
        if let Ok(key) = std::env::var(API_KEY_ENV) {
            if !key.trim().is_empty() {
                self.api_key = Some(key.trim().to_string());
            }
        }
        self
    }

    fn endpoint(&self, path: &str) -> String {
        let base = self.base_url.trim_end_matches('/');
        let base = base.strip_suffix("/v1").unwrap_or(base);
        format!("{base}/v1/{path}")
    }
}

pub struct HttpBackend {
    settings: HttpSettings,
    client: Client,
    meter: UsageMeter,
}

fn is_transient(status: StatusCode) -> bool {
    status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error()
}

fn error_message(body: &str) -> String {
    serde_json::from_str::<Value>(body)
        .ok()
        .and_then(|v| v.pointer("/error/message").and_then(Value::as_str).map(str::to_string))
        .unwrap_or_else(|| body.chars().take(500).collect())
}

impl HttpBackend {
    pub fn new(settings: HttpSettings) -> Result<Self, BackendError> {
        if settings.max_attempts == 0 {
            return Err(BackendError::InvalidInput("max_attempts must be at least 1".into()));
        }
        url::Url::parse(&settings.endpoint("chat/completions"))
            .map_err(|e| BackendError::InvalidInput(format!("bad base URL `{}`: {e}", settings.base_url)))?;
        let client = Client::builder()
            .timeout(settings.timeout)
            .build()
            .map_err(|e| BackendError::InvalidInput(format!("cannot build HTTP client: {e}")))?;
        Ok(HttpBackend { settings, client, meter: UsageMeter::default() })
    }

    pub fn settings(&self) -> &HttpSettings {
        &self.settings
    }

    fn post_json(&self, path: &str, body: &Value) -> Result<Value, BackendError> {
        let url = self.settings.endpoint(path);
        let mut backoff = self.settings.initial_backoff;
        let mut last_error = String::new();
        for attempt in 1..=self.settings.max_attempts {
            let mut request = self.client.post(&url).json(body);
            if let Some(key) = &self.settings.api_key {
                request = request.bearer_auth(key);
            }
            match request.send() {
                Ok(response) => {
                    let status = response.status();
                    let text = response
                        .text()
                        .map_err(|e| BackendError::Malformed(format!("unreadable response body: {e}")))?;
                    if status.is_success() {
                        return serde_json::from_str(&text)
                            .map_err(|e| BackendError::Malformed(format!("response is not JSON: {e}")));
                    }
                    if !is_transient(status) || attempt == self.settings.max_attempts {
                        return Err(BackendError::Rejected { status: status.as_u16(), message: error_message(&text) });
                    }
                    last_error = format!("HTTP {status}");
                }
                Err(e) => last_error = e.to_string(),
            }
            if attempt < self.settings.max_attempts {
                thread::sleep(backoff);
                backoff *= 2;
            }
        }
        Err(BackendError::Unavailable { attempts: self.settings.max_attempts, message: last_error })
    }
}

impl ChatBackend for HttpBackend {
    fn chat_complete(&self, messages: &[ChatMessage], params: &ChatParams) -> Result<String, BackendError> {
        self.meter.record_chat();
        check_messages(messages)?;
        params.validate()?;
        let body = json!({
            "model": self.settings.chat_model,
            "messages": messages,
            "temperature": params.temperature,
            "top_p": params.top_p,
            "max_tokens": params.max_tokens,
            "seed": params.seed,
        });
        let response = self.post_json("chat/completions", &body)?;
        response
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| BackendError::Malformed("missing choices[0].message.content".into()))
    }

    fn usage(&self) -> UsageCounters {
        self.meter.snapshot()
    }
}

#[derive(Deserialize)]
struct EmbeddingData {
    index: usize,
    embedding: Vec<f64>,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingData>,
}

impl Embedder for HttpBackend {
    fn dim(&self) -> usize {
        self.settings.embedding_dim
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError> {
        self.meter.record_embed(texts.len());
        check_texts(texts)?;
        let body = json!({ "model": self.settings.embedding_model, "input": texts });
        let response: EmbeddingResponse = serde_json::from_value(self.post_json("embeddings", &body)?)
            .map_err(|e| BackendError::Malformed(format!("bad embeddings response: {e}")))?;
        if response.data.len() != texts.len() {
            return Err(BackendError::Malformed(format!(
                "asked for {} embeddings, got {}",
                texts.len(),
                response.data.len()
            )));
        }
        let mut slots: Vec<Option<EmbeddingVector>> = vec![None; texts.len()];
        for item in response.data {
            if item.embedding.len() != self.settings.embedding_dim {
                return Err(BackendError::Malformed(format!(
                    "embedding has dimension {}, expected {}",
                    item.embedding.len(),
                    self.settings.embedding_dim
                )));
            }
            let slot = slots
                .get_mut(item.index)
                .ok_or_else(|| BackendError::Malformed(format!("embedding index {} out of range", item.index)))?;
            *slot = Some(EmbeddingVector::new(item.embedding).map_err(|e| BackendError::Malformed(e.to_string()))?);
        }
        slots
            .into_iter()
            .enumerate()
            .map(|(i, v)| v.ok_or_else(|| BackendError::Malformed(format!("no embedding for input {i}"))))
            .collect()
    }

    fn usage(&self) -> UsageCounters {
        self.meter.snapshot()
    }
}
