//! The three retrieval actions.
//!
//! Every action turns a node's query section into a ranked list of
//! [`RetrievedItem`]s (similarity descending, ranks `0..n`, at most `top_k`).
//! Actions only read; they never touch the chain.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, Embedder, EmbeddingVector};
use crate::chain::ActionType;
use crate::scoring::tokenize;
use crate::vectorstore::{cosine_similarity, StoreError, VectorStore};

pub mod data;
pub mod search;

pub use data::{CsvDataSource, DataRecord, DataSource, DataValue, HttpDataSource, StaticDataSource};
pub use search::{html_to_text, FixtureSearch, HttpSearch, HttpSearchSettings, SearchClient, SearchResult};

pub const DEFAULT_TOP_K: usize = 3;
pub const DEFAULT_TOP_M: usize = 8;
pub const DEFAULT_SIM_THRESHOLD: f64 = 0.8;
pub const DEFAULT_MAX_PAGE_CHARS: usize = 4000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ActionError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("retrieval failed: {0}")]
    RetrievalFailed(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

impl From<StoreError> for ActionError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Backend(b) => ActionError::Backend(b),
            StoreError::InvalidInput(m) => ActionError::InvalidInput(m),
            other => ActionError::RetrievalFailed(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ItemSource {
    Web,
    Knowledge,
    Data,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedItem {
    pub source: ItemSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snippet: Option<String>,
    pub content: String,
    pub similarity: f64,
    pub rank: usize,
}

/// Sorts by similarity descending (stable) and assigns ranks.
fn finalize(mut items: Vec<RetrievedItem>, top_k: usize) -> Vec<RetrievedItem> {
    items.sort_by(|a, b| b.similarity.total_cmp(&a.similarity));
    items.truncate(top_k);
    for (rank, item) in items.iter_mut().enumerate() {
        item.rank = rank;
    }
    items
}

/// Retrieval query for one node: `sub_question | guess`, or the
/// sub-question alone when there is no guess.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySection {
    pub sub_question: String,
    pub text: String,
    pub vector: Option<EmbeddingVector>,
}

pub fn build_query_section(sub_question: &str, guess_answer: Option<&str>) -> Result<QuerySection, ActionError> {
    let sub = sub_question.trim();
    if sub.is_empty() {
        return Err(ActionError::InvalidInput("sub-question is empty".into()));
    }
    let text = match guess_answer.map(str::trim).filter(|g| !g.is_empty()) {
        Some(g) => format!("{sub} | {g}"),
        None => sub.to_string(),
    };
    Ok(QuerySection { sub_question: sub.to_string(), text, vector: None })
}

impl QuerySection {
    /// Embeds the query once and memoizes the vector.
    pub fn embedding(&mut self, embedder: &dyn Embedder) -> Result<&EmbeddingVector, ActionError> {
        if self.vector.is_none() {
            let mut out = embedder.embed_batch(std::slice::from_ref(&self.text))?;
            self.vector = Some(out.pop().ok_or_else(|| BackendError::Malformed("empty embedding batch".into()))?);
        }
        Ok(self.vector.as_ref().unwrap())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WebQueryConfig {
    pub top_m: usize,
    pub top_k: usize,
    pub sim_threshold: f64,
    pub max_page_chars: usize,
}

impl Default for WebQueryConfig {
    fn default() -> Self {
        WebQueryConfig {
            top_m: DEFAULT_TOP_M,
            top_k: DEFAULT_TOP_K,
            sim_threshold: DEFAULT_SIM_THRESHOLD,
            max_page_chars: DEFAULT_MAX_PAGE_CHARS,
        }
    }
}

impl WebQueryConfig {
    pub fn validate(&self) -> Result<(), ActionError> {
        if self.top_k == 0 || self.top_m < self.top_k {
            return Err(ActionError::InvalidInput(format!(
                "need top_m >= top_k >= 1, got top_m={} top_k={}",
                self.top_m, self.top_k
            )));
        }
        if !(0.0..=1.0).contains(&self.sim_threshold) {
            return Err(ActionError::InvalidInput(format!("sim_threshold {} outside [0, 1]", self.sim_threshold)));
        }
        if self.max_page_chars == 0 {
            return Err(ActionError::InvalidInput("max_page_chars must be at least 1".into()));
        }
        Ok(())
    }
}

/// The query vector followed by one vector per text, in a single batch.
fn embed_with_query(
    qs: &mut QuerySection,
    texts: Vec<String>,
    embedder: &dyn Embedder,
) -> Result<Vec<EmbeddingVector>, ActionError> {
    let need_query = qs.vector.is_none();
    let mut batch = Vec::with_capacity(texts.len() + 1);
    if need_query {
        batch.push(qs.text.clone());
    }
    batch.extend(texts);
    let mut vectors = embedder.embed_batch(&batch)?;
    if vectors.len() != batch.len() {
        return Err(BackendError::Malformed(format!("{} embeddings for {} texts", vectors.len(), batch.len())).into());
    }
    if need_query {
        qs.vector = Some(vectors.remove(0));
    }
    Ok(vectors)
}

struct Page {
    result: SearchResult,
    content: String,
}

fn fetch_pages(results: Vec<SearchResult>, search: &dyn SearchClient, max_chars: usize) -> Vec<Page> {
    results
        .into_iter()
        .filter_map(|result| {
            let content = search
                .fetch_content(&result)
                .ok()
                .filter(|c| !c.trim().is_empty())
                .or_else(|| Some(result.snippet.clone()).filter(|s| !s.trim().is_empty()))?;
            let content: String = content.chars().take(max_chars).collect();
            Some(Page { result, content })
        })
        .collect()
}

fn rank_pages(
    qs: &mut QuerySection,
    pages: Vec<Page>,
    embedder: &dyn Embedder,
    top_k: usize,
) -> Result<Vec<RetrievedItem>, ActionError> {
    if pages.is_empty() {
        return Ok(Vec::new());
    }
    let vectors = embed_with_query(qs, pages.iter().map(|p| p.content.clone()).collect(), embedder)?;
    let query = qs.vector.as_ref().expect("query embedded above");
    let mut items = Vec::with_capacity(pages.len());
    for (page, vector) in pages.into_iter().zip(&vectors) {
        items.push(RetrievedItem {
            source: ItemSource::Web,
            title: Some(page.result.title),
            snippet: Some(page.result.snippet),
            content: page.content,
            similarity: cosine_similarity(query, vector)?,
            rank: 0,
        });
    }
    Ok(finalize(items, top_k))
}

/// Text embedded for the snippet filter.
pub fn title_snippet_text(result: &SearchResult) -> String {
    format!("{} | {}", result.title, result.snippet)
}

/// Search, filter by title/snippet similarity, fetch and re-rank contents.
///
/// With `missing_flag` set there is no guess to compare snippets against, so
/// the first `top_k` results are fetched directly and ranked by content.
pub fn web_query_action(
    qs: &mut QuerySection,
    missing_flag: bool,
    search: &dyn SearchClient,
    embedder: &dyn Embedder,
    cfg: &WebQueryConfig,
) -> Result<Vec<RetrievedItem>, ActionError> {
    cfg.validate()?;
    let mut results = search.search(&qs.sub_question, cfg.top_m)?;
    results.truncate(cfg.top_m);
    if results.is_empty() {
        return Ok(Vec::new());
    }

    if missing_flag {
        results.truncate(cfg.top_k);
        let pages = fetch_pages(results, search, cfg.max_page_chars);
        return rank_pages(qs, pages, embedder, cfg.top_k);
    }

    let vectors = embed_with_query(qs, results.iter().map(title_snippet_text).collect(), embedder)?;
    let query = qs.vector.clone().expect("query embedded above");
    let mut survivors = Vec::new();
    for (result, vector) in results.into_iter().zip(&vectors) {
        if cosine_similarity(&query, vector)? >= cfg.sim_threshold {
            survivors.push(result);
        }
    }
    let pages = fetch_pages(survivors, search, cfg.max_page_chars);
    rank_pages(qs, pages, embedder, cfg.top_k)
}

/// Top-k chunks of the local knowledge base.
pub fn knowledge_action(
    qs: &mut QuerySection,
    store: &VectorStore,
    embedder: &dyn Embedder,
    top_k: usize,
) -> Result<Vec<RetrievedItem>, ActionError> {
    if top_k == 0 {
        return Err(ActionError::InvalidInput("top_k must be at least 1".into()));
    }
    if store.is_empty() {
        return Err(ActionError::RetrievalFailed("knowledge store is empty".into()));
    }
    let query = qs.embedding(embedder)?.clone();
    let hits = store.query(&query, top_k)?;
    Ok(hits
        .into_iter()
        .enumerate()
        .map(|(rank, hit)| RetrievedItem {
            source: ItemSource::Knowledge,
            title: Some(format!("{}#{}", hit.chunk.doc_id, hit.chunk.chunk_index)),
            snippet: None,
            content: hit.chunk.text,
            similarity: hit.similarity,
            rank,
        })
        .collect())
}

/// Records whose keys share the most tokens with the query.
///
/// Similarity is the number of distinct shared tokens over the number of
/// distinct query tokens; ties go to the smaller key.
pub fn data_action(qs: &QuerySection, source: &dyn DataSource, top_k: usize) -> Result<Vec<RetrievedItem>, ActionError> {
    if top_k == 0 {
        return Err(ActionError::InvalidInput("top_k must be at least 1".into()));
    }
    let query: BTreeSet<String> = tokenize(&qs.text).tokens.into_iter().collect();
    if query.is_empty() {
        return Ok(Vec::new());
    }
    let mut scored: Vec<(usize, DataRecord)> = source
        .records()?
        .into_iter()
        .filter_map(|r| {
            let key: BTreeSet<String> = tokenize(&r.key).tokens.into_iter().collect();
            let shared = key.intersection(&query).count();
            (shared > 0).then_some((shared, r))
        })
        .collect();
    scored.sort_by(|(sa, a), (sb, b)| match sb.cmp(sa) {
        Ordering::Equal => a.key.cmp(&b.key),
        other => other,
    });
    Ok(scored
        .into_iter()
        .take(top_k)
        .enumerate()
        .map(|(rank, (shared, record))| RetrievedItem {
            source: ItemSource::Data,
            title: Some(record.key.clone()),
            snippet: None,
            content: record.render(),
            similarity: shared as f64 / query.len() as f64,
            rank,
        })
        .collect())
}

/// Everything the actions need, shared across nodes and questions.
#[derive(Clone, Default)]
pub struct ActionSet {
    pub search: Option<Arc<dyn SearchClient>>,
    pub store: Option<Arc<RwLock<VectorStore>>>,
    pub data: Option<Arc<dyn DataSource>>,
}

impl ActionSet {
    pub fn with_search(mut self, search: impl SearchClient + 'static) -> Self {
        self.search = Some(Arc::new(search));
        self
    }

    pub fn with_store(mut self, store: VectorStore) -> Self {
        self.store = Some(Arc::new(RwLock::new(store)));
        self
    }

    pub fn with_data(mut self, data: impl DataSource + 'static) -> Self {
        self.data = Some(Arc::new(data));
        self
    }

    /// Runs `action` for one node's query section.
    pub fn run(
        &self,
        action: ActionType,
        qs: &mut QuerySection,
        missing_flag: bool,
        embedder: &dyn Embedder,
        cfg: &WebQueryConfig,
    ) -> Result<Vec<RetrievedItem>, ActionError> {
        let unavailable = |what: &str| ActionError::RetrievalFailed(format!("no {what} configured"));
        match action {
            ActionType::WebQuery => {
                let search = self.search.as_deref().ok_or_else(|| unavailable("search client"))?;
                web_query_action(qs, missing_flag, search, embedder, cfg)
            }
            ActionType::KnowledgeEncode => {
                let store = self.store.as_ref().ok_or_else(|| unavailable("knowledge store"))?;
                let store = store.read().map_err(|_| ActionError::RetrievalFailed("store lock poisoned".into()))?;
                knowledge_action(qs, &store, embedder, cfg.top_k)
            }
            ActionType::DataAnalyze => {
                let data = self.data.as_deref().ok_or_else(|| unavailable("data source"))?;
                data_action(qs, data, cfg.top_k)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::MockEmbedder;

    #[test]
    fn query_section_concat() {
        assert_eq!(build_query_section("Who founded X?", Some("Alice")).unwrap().text, "Who founded X? | Alice");
        assert_eq!(build_query_section("Who founded X?", None).unwrap().text, "Who founded X?");
        assert_eq!(build_query_section("Who founded X?", Some("  ")).unwrap().text, "Who founded X?");
        assert!(build_query_section("", Some("a")).is_err());
    }

    #[test]
    fn query_embedding_is_memoized() {
        let e = MockEmbedder::new(8);
        let mut qs = build_query_section("q", None).unwrap();
        qs.embedding(&e).unwrap();
        qs.embedding(&e).unwrap();
        assert_eq!(e.usage().embed_calls, 1);
    }

    #[test]
    fn data_action_examples() {
        let source = StaticDataSource::new(vec![DataRecord::new("BTC price", DataValue::Number(43000.0))]).unwrap();
        let qs = QuerySection { sub_question: "x".into(), text: "current BTC price | ".into(), vector: None };
        let items = data_action(&qs, &source, 3).unwrap();
        assert_eq!(items.len(), 1);
        assert!(items[0].content.contains("BTC price = 43000"));
        assert!((items[0].similarity - 2.0 / 3.0).abs() < 1e-12);

        let none = build_query_section("weather in Oslo", None).unwrap();
        assert!(data_action(&none, &source, 3).unwrap().is_empty());

        let tie = StaticDataSource::new(vec![
            DataRecord::new("price zeta", DataValue::Number(1.0)),
            DataRecord::new("price alpha", DataValue::Number(2.0)),
        ])
        .unwrap();
        let qs = build_query_section("price", None).unwrap();
        let keys: Vec<_> = data_action(&qs, &tie, 3).unwrap().into_iter().map(|i| i.title.unwrap()).collect();
        assert_eq!(keys, ["price alpha", "price zeta"]);
    }

    #[test]
    fn knowledge_action_identity_and_empty() {
        let e = MockEmbedder::new(16);
        let mut store = VectorStore::new();
        let texts: Vec<String> = ["Who founded X? | Alice", "unrelated", "more text"].iter().map(|s| s.to_string()).collect();
        store.upsert_chunks("kb", &texts, &e).unwrap();
        let mut qs = build_query_section("Who founded X?", Some("Alice")).unwrap();
        let items = knowledge_action(&mut qs, &store, &e, 2).unwrap();
        assert_eq!(items.len(), 2);
        assert_eq!(items[0].content, "Who founded X? | Alice");
        assert!((items[0].similarity - 1.0).abs() < 1e-12);
        assert_eq!(items[0].source, ItemSource::Knowledge);
        assert!(matches!(
            knowledge_action(&mut qs, &VectorStore::new(), &e, 2),
            Err(ActionError::RetrievalFailed(_))
        ));
    }

    #[test]
    fn missing_components_fail_retrieval() {
        let e = MockEmbedder::new(8);
        let set = ActionSet::default();
        for action in ActionType::ALL {
            let mut qs = build_query_section("q", None).unwrap();
            assert!(matches!(set.run(action, &mut qs, true, &e, &WebQueryConfig::default()), Err(ActionError::RetrievalFailed(_))));
        }
    }

    #[test]
    fn web_config_validation() {
        assert!(WebQueryConfig { top_m: 2, top_k: 3, ..Default::default() }.validate().is_err());
        assert!(WebQueryConfig { sim_threshold: 1.2, ..Default::default() }.validate().is_err());
        assert!(WebQueryConfig::default().validate().is_ok());
    }
}
