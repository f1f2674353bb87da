//! Runs a question end to end: chain generation, per-node retrieval with
//! verification and imputation, and final answer generation.
//!
//! A successful run makes exactly two chat calls (chain, final answer),
//! plus one more only when the first chain reply cannot be parsed.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actions::{build_query_section, ActionSet, RetrievedItem, WebQueryConfig};
use crate::backends::{BackendError, ChatBackend, ChatParams, Embedder, Metered, UsageCounters};
use crate::chain::{
    build_chain_prompt, build_final_prompt, default_catalog, parse_chain, strip_final_marker, with_format_reminder,
    ActionCatalog, ActionChain, ActionNode, ActionType, ChainError,
};
use crate::scoring::{Scorer, DEFAULT_THRESHOLD};

pub const TRACE_VERSION: u32 = 1;
pub const UNKNOWN_ANSWER: &str = "unknown";

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("question failed after {attempts} chain attempt(s): {reason}")]
    QuestionFailed { reason: String, raw: String, attempts: u32 },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablations {
    pub no_actions: bool,
    pub no_verification: bool,
    pub no_imputation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub retrieval: WebQueryConfig,
    pub threshold: f64,
    pub scorer: Scorer,
    pub chat_params: ChatParams,
    pub ablations: Ablations,
    pub max_parallel_nodes: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            retrieval: WebQueryConfig::default(),
            threshold: DEFAULT_THRESHOLD,
            scorer: Scorer::default(),
            chat_params: ChatParams::default(),
            ablations: Ablations::default(),
            max_parallel_nodes: 4,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), RunError> {
        let invalid = |m: String| RunError::InvalidInput(m);
        self.retrieval.validate().map_err(|e| invalid(e.to_string()))?;
        self.chat_params.validate().map_err(|e| invalid(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(invalid(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        if self.max_parallel_nodes == 0 {
            return Err(invalid("max_parallel_nodes must be at least 1".into()));
        }
        Scorer::new(self.scorer.weights, self.scorer.awl_cap, self.scorer.max_reference_tokens)
            .map_err(|e| invalid(e.to_string()))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeEvent {
    pub index: usize,
    pub action: ActionType,
    pub items_retrieved: usize,
    pub mrfs: Option<f64>,
    pub corrected: bool,
    pub imputed: bool,
    /// The answer fell back to the guess (or "unknown") without support.
    pub low_confidence: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub trace_version: u32,
    pub question: String,
    pub raw_chain_text: String,
    pub chain_attempts: u32,
    pub chain_before: ActionChain,
    pub chain_after: ActionChain,
    pub per_node_events: Vec<NodeEvent>,
    pub ablations: Ablations,
    pub raw_final_text: String,
    pub usage: UsageCounters,
    pub wall_time_ms: u64,
}

impl Trace {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("traces always serialize")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinalAnswer {
    pub text: String,
    pub trace: Trace,
}

/// A parsed chain together with what it cost to obtain.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedChain {
    pub question: String,
    pub raw: String,
    pub chain: ActionChain,
    pub attempts: u32,
}

fn add_usage(a: UsageCounters, b: UsageCounters) -> UsageCounters {
    UsageCounters {
        chat_calls: a.chat_calls + b.chat_calls,
        embed_calls: a.embed_calls + b.embed_calls,
        embed_texts: a.embed_texts + b.embed_texts,
    }
}

/// Processes one node: retrieve, then impute (unsolved nodes) or verify
/// (guessed nodes). Retrieval problems never fail the node; they fall back
/// to the guess and are flagged in the returned event.
pub fn process_node(
    node: &ActionNode,
    actions: &ActionSet,
    embedder: &dyn Embedder,
    cfg: &RunConfig,
) -> (ActionNode, NodeEvent) {
    let mut out = node.clone();
    let mut event = NodeEvent {
        index: node.index,
        action: node.action,
        items_retrieved: 0,
        mrfs: None,
        corrected: false,
        imputed: false,
        low_confidence: false,
        error: None,
    };
    let fallback = node.guess_answer.clone().unwrap_or_else(|| UNKNOWN_ANSWER.to_string());

    let retrieved: Result<Vec<RetrievedItem>, String> = build_query_section(&node.sub_question, node.guess_answer.as_deref())
        .map_err(|e| e.to_string())
        .and_then(|mut qs| {
            actions
                .run(node.action, &mut qs, node.missing_flag, embedder, &cfg.retrieval)
                .map_err(|e| e.to_string())
        });
    let items = match retrieved {
        Ok(items) => items,
        Err(e) => {
            event.error = Some(e);
            Vec::new()
        }
    };
    event.items_retrieved = items.len();
    out.evidence = items;

    if out.evidence.is_empty() {
        event.low_confidence = true;
        out.resolved_answer = Some(fallback);
        return (out, event);
    }

    match &node.guess_answer {
        None if cfg.ablations.no_imputation => {
            event.low_confidence = true;
            out.resolved_answer = Some(fallback);
        }
        None => {
            event.imputed = true;
            out.resolved_answer = Some(out.evidence[0].content.clone());
        }
        Some(guess) if cfg.ablations.no_verification => {
            out.resolved_answer = Some(guess.clone());
        }
        Some(guess) => {
            let references: Vec<&str> = out.evidence.iter().map(|i| i.content.as_str()).collect();
            match cfg.scorer.verify_answer(guess, &references, cfg.threshold) {
                Ok(outcome) => {
                    event.mrfs = Some(outcome.mrfs);
                    event.corrected = outcome.corrected;
                    out.resolved_answer = Some(outcome.replacement.clone().unwrap_or_else(|| guess.clone()));
                    out.verification = Some(outcome);
                }
                Err(e) => {
                    event.error = Some(e.to_string());
                    event.low_confidence = true;
                    out.resolved_answer = Some(guess.clone());
                }
            }
        }
    }
    (out, event)
}

/// Chat and embedding backends plus the retrieval actions.
#[derive(Clone)]
pub struct Engine {
    chat: Arc<dyn ChatBackend>,
    embedder: Arc<dyn Embedder>,
    actions: ActionSet,
    catalog: ActionCatalog,
}

impl Engine {
    pub fn new(chat: Arc<dyn ChatBackend>, embedder: Arc<dyn Embedder>, actions: ActionSet) -> Self {
        Engine { chat, embedder, actions, catalog: default_catalog() }
    }

    pub fn with_catalog(mut self, catalog: ActionCatalog) -> Self {
        self.catalog = catalog;
        self
    }

    pub fn chat(&self) -> &dyn ChatBackend {
        self.chat.as_ref()
    }

    pub fn embedder(&self) -> &dyn Embedder {
        self.embedder.as_ref()
    }

    pub fn actions(&self) -> &ActionSet {
        &self.actions
    }

    /// Asks for a chain, retrying once with a format reminder.
    pub fn generate_chain(&self, question: &str, cfg: &RunConfig) -> Result<GeneratedChain, RunError> {
        let prompt = build_chain_prompt(question, &self.catalog).map_err(|e| match e {
            ChainError::InvalidInput(m) | ChainError::InvalidCatalog(m) => RunError::InvalidInput(m),
            other => RunError::InvalidInput(other.to_string()),
        })?;
        let first = self.chat.chat_complete(&prompt.role_messages, &cfg.chat_params)?;
        let first_err = match parse_chain(&first, question) {
            Ok(chain) => return Ok(GeneratedChain { question: question.to_string(), raw: first, chain, attempts: 1 }),
            Err(e) => e,
        };
        let retry = with_format_reminder(&prompt);
        let second = self.chat.chat_complete(&retry.role_messages, &cfg.chat_params)?;
        match parse_chain(&second, question) {
            Ok(chain) => Ok(GeneratedChain { question: question.to_string(), raw: second, chain, attempts: 2 }),
            Err(e) => Err(RunError::QuestionFailed {
                reason: format!("{first_err}; retry: {e}"),
                raw: second,
                attempts: 2,
            }),
        }
    }

    fn process_chain(&self, chain: &ActionChain, embedder: &dyn Embedder, cfg: &RunConfig) -> (ActionChain, Vec<NodeEvent>) {
        let n = chain.nodes.len();
        let slots: Mutex<Vec<Option<(ActionNode, NodeEvent)>>> = Mutex::new(vec![None; n]);
        let next = AtomicUsize::new(0);
        let workers = cfg.max_parallel_nodes.clamp(1, n.max(1));
        let work = || loop {
            let i = next.fetch_add(1, Ordering::SeqCst);
            if i >= n {
                break;
            }
            let done = process_node(&chain.nodes[i], &self.actions, embedder, cfg);
            slots.lock().unwrap()[i] = Some(done);
        };
        if workers == 1 {
            work();
        } else {
            thread::scope(|s| {
                for _ in 0..workers {
                    s.spawn(work);
                }
            });
        }
        let (nodes, events) = slots
            .into_inner()
            .unwrap()
            .into_iter()
            .map(|slot| slot.expect("every node processed"))
            .unzip();
        (ActionChain { question: chain.question.clone(), nodes }, events)
    }

    /// Everything after chain generation. Used directly to replay a cached
    /// chain under different settings.
    pub fn run_from_chain(&self, generated: &GeneratedChain, cfg: &RunConfig) -> Result<FinalAnswer, RunError> {
        cfg.validate()?;
        let started = Instant::now();
        let chat = Metered::new(self.chat.as_ref());
        let embedder = Metered::new(self.embedder.as_ref());
        let answer = self.finish(generated, cfg, &chat, &embedder, started)?;
        Ok(answer)
    }

    fn finish(
        &self,
        generated: &GeneratedChain,
        cfg: &RunConfig,
        chat: &Metered<&dyn ChatBackend>,
        embedder: &Metered<&dyn Embedder>,
        started: Instant,
    ) -> Result<FinalAnswer, RunError> {
        let chain = &generated.chain;
        let (chain_after, per_node_events) = if cfg.ablations.no_actions {
            let mut after = chain.clone();
            let events = after
                .nodes
                .iter_mut()
                .map(|node| {
                    node.resolved_answer = Some(node.guess_answer.clone().unwrap_or_else(|| UNKNOWN_ANSWER.into()));
                    NodeEvent {
                        index: node.index,
                        action: node.action,
                        items_retrieved: 0,
                        mrfs: None,
                        corrected: false,
                        imputed: false,
                        low_confidence: node.missing_flag,
                        error: None,
                    }
                })
                .collect();
            (after, events)
        } else {
            self.process_chain(chain, embedder, cfg)
        };

        let prompt = build_final_prompt(&chain_after, &generated.question)
            .map_err(|e| RunError::InvalidInput(e.to_string()))?;
        let raw_final = chat.chat_complete(&prompt.role_messages, &cfg.chat_params)?;
        let text = strip_final_marker(&raw_final).to_string();
        if text.is_empty() {
            return Err(RunError::QuestionFailed {
                reason: "final answer is empty".into(),
                raw: raw_final,
                attempts: generated.attempts,
            });
        }

        let chain_usage = UsageCounters { chat_calls: generated.attempts as u64, ..Default::default() };
        let usage = add_usage(chain_usage, add_usage(chat.counters(), embedder.counters()));
        let trace = Trace {
            trace_version: TRACE_VERSION,
            question: generated.question.clone(),
            raw_chain_text: generated.raw.clone(),
            chain_attempts: generated.attempts,
            chain_before: chain.clone(),
            chain_after,
            per_node_events,
            ablations: cfg.ablations,
            raw_final_text: raw_final,
            usage,
            wall_time_ms: started.elapsed().as_millis() as u64,
        };
        Ok(FinalAnswer { text, trace })
    }

    pub fn run_question(&self, question: &str, cfg: &RunConfig) -> Result<FinalAnswer, RunError> {
        if question.trim().is_empty() {
            return Err(RunError::InvalidInput("question is empty".into()));
        }
        cfg.validate()?;
        let started = Instant::now();
        let generated = self.generate_chain(question, cfg)?;
        let chat = Metered::new(self.chat.as_ref());
        let embedder = Metered::new(self.embedder.as_ref());
        self.finish(&generated, cfg, &chat, &embedder, started)
    }
}
