//! Action-chain question answering.
//!
//! A question is decomposed by a chat model into a chain of typed
//! sub-questions ([`chain`]). Each node is grounded by a retrieval action
//! ([`actions`]): web search, a local vector store ([`vectorstore`]), or a
//! tabular data source. Guessed sub-answers are checked against the retrieved
//! evidence with a lexical faith score ([`scoring`]) and replaced when they
//! are not supported; unsolved nodes are filled from the top hit. The
//! [`executor`] runs the whole pipeline and records a trace, and [`bench`]
//! evaluates it on QA datasets.
//!
//! Everything runs offline against [`backends::MockChat`] and
//! [`backends::MockEmbedder`]; [`backends::HttpBackend`] talks to an
//! OpenAI-compatible API.

pub mod actions;
pub mod backends;
pub mod bench;
pub mod chain;
pub mod cli;
pub mod config;
pub mod executor;
pub mod scoring;
pub mod vectorstore;

pub use chain::{ActionChain, ActionNode, ActionType};
pub use config::EngineConfig;
pub use executor::{Engine, FinalAnswer, RunConfig, RunError, Trace};
pub use scoring::{faith_score, mrfs, verify_answer, Weights};
