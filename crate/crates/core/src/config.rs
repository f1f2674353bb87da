//! Engine configuration file.
//!
//! A TOML document; every section and key is optional and unknown keys are
//! rejected. Relative paths resolve against the config file's directory.
//!
//! ```toml
//! [backend]
//! kind = "mock"                 # or "http"
//! mock_script = "script.json"
//! embedding_dim = 64
//!
//! [chat]
//! temperature = 0.0
//!
//! [scoring]
//! alpha = 0.4
//! beta = 0.4
//! gamma = 0.2
//! threshold = 0.5
//!
//! [retrieval]
//! top_k = 3
//!
//! [search]
//! kind = "fixture"
//! fixture = "search.jsonl"
//!
//! [knowledge]
//! store = "store.jsonl"
//!
//! [data]
//! csv = "market.csv"
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actions::{
    ActionSet, CsvDataSource, FixtureSearch, HttpDataSource, HttpSearch, HttpSearchSettings, WebQueryConfig,
    DEFAULT_MAX_PAGE_CHARS, DEFAULT_SIM_THRESHOLD, DEFAULT_TOP_K, DEFAULT_TOP_M,
};
use crate::backends::{ChatBackend, ChatParams, Embedder, HttpBackend, HttpSettings, MockChat, MockEmbedder, DEFAULT_EMBEDDING_DIM};
use crate::executor::{Ablations, Engine, RunConfig};
use crate::scoring::{Scorer, Weights, DEFAULT_AWL_CAP, DEFAULT_MAX_REFERENCE_TOKENS, DEFAULT_THRESHOLD};
use crate::vectorstore::{VectorStore, DEFAULT_CHUNK_CHARS, DEFAULT_OVERLAP_CHARS};

pub type Backends = (Arc<dyn ChatBackend>, Arc<dyn Embedder>);

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("bad config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Http,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    pub kind: BackendKind,
    pub base_url: Option<String>,
    pub chat_model: String,
    pub embedding_model: String,
    pub embedding_dim: usize,
    pub timeout_secs: f64,
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub mock_script: Option<PathBuf>,
}

impl Default for BackendSection {
    fn default() -> Self {
        let http = HttpSettings::default();
        BackendSection {
            kind: BackendKind::Http,
            base_url: None,
            chat_model: http.chat_model,
            embedding_model: http.embedding_model,
            embedding_dim: DEFAULT_EMBEDDING_DIM,
            timeout_secs: http.timeout.as_secs_f64(),
            max_attempts: http.max_attempts,
            initial_backoff_ms: http.initial_backoff.as_millis() as u64,
            mock_script: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringSection {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub threshold: f64,
    pub awl_cap: f64,
    pub max_reference_tokens: usize,
}

impl Default for ScoringSection {
    fn default() -> Self {
        let w = Weights::default();
        ScoringSection {
            alpha: w.alpha(),
            beta: w.beta(),
            gamma: w.gamma(),
            threshold: DEFAULT_THRESHOLD,
            awl_cap: DEFAULT_AWL_CAP,
            max_reference_tokens: DEFAULT_MAX_REFERENCE_TOKENS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalSection {
    pub top_k: usize,
    pub top_m: usize,
    pub sim_threshold: f64,
    pub max_page_chars: usize,
    pub requests_per_second: f64,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        RetrievalSection {
            top_k: DEFAULT_TOP_K,
            top_m: DEFAULT_TOP_M,
            sim_threshold: DEFAULT_SIM_THRESHOLD,
            max_page_chars: DEFAULT_MAX_PAGE_CHARS,
            requests_per_second: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChunkingSection {
    pub chunk_chars: usize,
    pub overlap_chars: usize,
}

impl Default for ChunkingSection {
    fn default() -> Self {
        ChunkingSection { chunk_chars: DEFAULT_CHUNK_CHARS, overlap_chars: DEFAULT_OVERLAP_CHARS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineSection {
    pub max_parallel_nodes: usize,
    pub bench_workers: usize,
}

impl Default for EngineSection {
    fn default() -> Self {
        EngineSection { max_parallel_nodes: 4, bench_workers: 4 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchKind {
    #[default]
    None,
    Fixture,
    Http,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSection {
    pub kind: SearchKind,
    pub fixture: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub api_key: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnowledgeSection {
    pub store: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub csv: Option<PathBuf>,
    pub endpoint: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub backend: BackendSection,
    pub chat: ChatParams,
    pub scoring: ScoringSection,
    pub retrieval: RetrievalSection,
    pub chunking: ChunkingSection,
    pub ablations: Ablations,
    pub engine: EngineSection,
    pub search: SearchSection,
    pub knowledge: KnowledgeSection,
    pub data: DataSection,
}

fn resolve(base: &Path, path: &mut Option<PathBuf>) {
    if let Some(p) = path {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
}

impl EngineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let config: EngineConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse { path: "<string>".into(), message: e.to_string() })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let display = path.display().to_string();
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: display.clone(), source })?;
        let mut config: EngineConfig =
            toml::from_str(&text).map_err(|e| ConfigError::Parse { path: display, message: e.to_string() })?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        resolve(&base, &mut config.backend.mock_script);
        resolve(&base, &mut config.search.fixture);
        resolve(&base, &mut config.knowledge.store);
        resolve(&base, &mut config.data.csv);
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn weights(&self) -> Result<Weights, ConfigError> {
        let s = &self.scoring;
        Weights::new(s.alpha, s.beta, s.gamma).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn run_config(&self) -> Result<RunConfig, ConfigError> {
        let s = &self.scoring;
        let scorer = Scorer::new(self.weights()?, s.awl_cap, s.max_reference_tokens)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let r = &self.retrieval;
        let cfg = RunConfig {
            retrieval: WebQueryConfig {
                top_m: r.top_m,
                top_k: r.top_k,
                sim_threshold: r.sim_threshold,
                max_page_chars: r.max_page_chars,
            },
            threshold: s.threshold,
            scorer,
            chat_params: self.chat,
            ablations: self.ablations,
            max_parallel_nodes: self.engine.max_parallel_nodes,
        };
        cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.run_config()?;
        let invalid = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.engine.bench_workers == 0 {
            return invalid("engine.bench_workers must be at least 1");
        }
        if self.chunking.chunk_chars == 0 || self.chunking.overlap_chars >= self.chunking.chunk_chars {
            return invalid("chunking needs chunk_chars >= 1 and overlap_chars < chunk_chars");
        }
        if self.backend.kind == BackendKind::Mock && self.backend.embedding_dim < 8 {
            return invalid("backend.embedding_dim must be at least 8 for the mock embedder");
        }
        if self.backend.embedding_dim == 0 {
            return invalid("backend.embedding_dim must be positive");
        }
        if !(self.backend.timeout_secs.is_finite() && self.backend.timeout_secs > 0.0) {
            return invalid("backend.timeout_secs must be positive");
        }
        if self.backend.max_attempts == 0 {
            return invalid("backend.max_attempts must be at least 1");
        }
        match self.search.kind {
            SearchKind::Fixture if self.search.fixture.is_none() => return invalid("search.kind = \"fixture\" needs search.fixture"),
            SearchKind::Http if self.search.endpoint.is_none() => return invalid("search.kind = \"http\" needs search.endpoint"),
            _ => {}
        }
        if self.data.csv.is_some() && self.data.endpoint.is_some() {
            return invalid("set at most one of data.csv and data.endpoint");
        }
        Ok(())
    }

    fn http_settings(&self) -> HttpSettings {
        let b = &self.backend;
        let mut settings = HttpSettings {
            chat_model: b.chat_model.clone(),
            embedding_model: b.embedding_model.clone(),
            embedding_dim: b.embedding_dim,
            timeout: Duration::from_secs_f64(b.timeout_secs),
            max_attempts: b.max_attempts,
            initial_backoff: Duration::from_millis(b.initial_backoff_ms),
            ..HttpSettings::default()
        };
        if let Some(url) = &b.base_url {
            settings.base_url = url.clone();
        }
        settings.with_env_overrides()
    }

    /// Chat backend and embedder as configured.
    pub fn build_backends(&self) -> Result<Backends, ConfigError> {
        match self.backend.kind {
            BackendKind::Mock => {
                let chat = match &self.backend.mock_script {
                    Some(path) => MockChat::from_script_file(path).map_err(|e| ConfigError::Invalid(e.to_string()))?,
                    None => MockChat::new(),
                };
                Ok((Arc::new(chat), Arc::new(MockEmbedder::new(self.backend.embedding_dim))))
            }
            BackendKind::Http => {
                let http = Arc::new(HttpBackend::new(self.http_settings()).map_err(|e| ConfigError::Invalid(e.to_string()))?);
                Ok((http.clone(), http))
            }
        }
    }

    pub fn build_actions(&self) -> Result<ActionSet, ConfigError> {
        let invalid = |e: String| ConfigError::Invalid(e);
        let timeout = Duration::from_secs_f64(self.backend.timeout_secs);
        let mut actions = ActionSet::default();
        match self.search.kind {
            SearchKind::None => {}
            SearchKind::Fixture => {
                let path = self.search.fixture.as_ref().expect("validated");
                actions = actions.with_search(FixtureSearch::from_path(path).map_err(|e| invalid(e.to_string()))?);
            }
            SearchKind::Http => {
                let settings = HttpSearchSettings {
                    endpoint: self.search.endpoint.clone().expect("validated"),
                    api_key: self.search.api_key.clone(),
                    timeout,
                    requests_per_second: self.retrieval.requests_per_second,
                    max_page_chars: self.retrieval.max_page_chars,
                };
                actions = actions.with_search(HttpSearch::new(settings).map_err(|e| invalid(e.to_string()))?);
            }
        }
        if let Some(path) = &self.knowledge.store {
            let store = VectorStore::load(path).map_err(|e| invalid(e.to_string()))?;
            actions = actions.with_store(store);
        }
        if let Some(path) = &self.data.csv {
            actions = actions.with_data(CsvDataSource::from_path(path).map_err(|e| invalid(e.to_string()))?);
        } else if let Some(endpoint) = &self.data.endpoint {
            actions = actions.with_data(HttpDataSource::new(endpoint.clone(), timeout).map_err(|e| invalid(e.to_string()))?);
        }
        Ok(actions)
    }

    pub fn build_engine(&self) -> Result<Engine, ConfigError> {
        let (chat, embedder) = self.build_backends()?;
        Ok(Engine::new(chat, embedder, self.build_actions()?))
    }
}
