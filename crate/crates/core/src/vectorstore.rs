//! Chunked, embedded document store with exact top-k cosine search.
//!
//! Persistence is JSONL, one chunk per line:
//! `{"doc_id": ..., "chunk_index": ..., "text": ..., "vector": [...]}`.

use std::cmp::Ordering;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, Embedder, EmbeddingVector};

pub const DEFAULT_CHUNK_CHARS: usize = 1000;
pub const DEFAULT_OVERLAP_CHARS: usize = 200;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("vector store is empty")]
    EmptyStore,
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("corrupt store file at line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Cosine of the angle between `a` and `b`, clamped to [-1, 1].
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, StoreError> {
    if a.dim() != b.dim() {
        return Err(StoreError::InvalidInput(format!("dimension mismatch: {} vs {}", a.dim(), b.dim())));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(StoreError::InvalidInput("zero vector has no direction".into()));
    }
    let dot: f64 = a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Splits `text` into windows of at most `chunk_chars` characters, each
/// starting `chunk_chars - overlap_chars` after the previous one.
pub fn chunk_document(text: &str, chunk_chars: usize, overlap_chars: usize) -> Result<Vec<String>, StoreError> {
    if chunk_chars == 0 {
        return Err(StoreError::InvalidInput("chunk size must be at least 1".into()));
    }
    if overlap_chars >= chunk_chars {
        return Err(StoreError::InvalidInput(format!(
            "overlap {overlap_chars} must be smaller than chunk size {chunk_chars}"
        )));
    }
    let chars: Vec<char> = text.chars().collect();
    let step = chunk_chars - overlap_chars;
    let mut chunks = Vec::new();
    let mut start = 0;
    while start < chars.len() {
        let end = (start + chunk_chars).min(chars.len());
        chunks.push(chars[start..end].iter().collect());
        if end == chars.len() {
            break;
        }
        start += step;
    }
    Ok(chunks)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeChunk {
    pub doc_id: String,
    pub chunk_index: usize,
    pub text: String,
    pub vector: EmbeddingVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoreQueryHit {
    pub chunk: KnowledgeChunk,
    pub similarity: f64,
}

/// Hits ordered by similarity descending, then `(doc_id, chunk_index)`.
pub(crate) fn hit_order(a_sim: f64, a: &KnowledgeChunk, b_sim: f64, b: &KnowledgeChunk) -> Ordering {
    b_sim
        .total_cmp(&a_sim)
        .then_with(|| a.doc_id.cmp(&b.doc_id))
        .then_with(|| a.chunk_index.cmp(&b.chunk_index))
}

/// In-memory store. Wrap in a `RwLock` to share with concurrent writers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VectorStore {
    chunks: Vec<KnowledgeChunk>,
}

impl VectorStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.chunks.first().map(|c| c.vector.dim())
    }

    pub fn chunks(&self) -> &[KnowledgeChunk] {
        &self.chunks
    }

    pub fn doc_chunks<'a>(&'a self, doc_id: &'a str) -> impl Iterator<Item = &'a KnowledgeChunk> + 'a {
        self.chunks.iter().filter(move |c| c.doc_id == doc_id)
    }

    /// Replaces every chunk of `doc_id` with `vectors`, all or nothing.
    pub fn replace_document(
        &mut self,
        doc_id: &str,
        texts: &[String],
        vectors: Vec<EmbeddingVector>,
    ) -> Result<usize, StoreError> {
        if texts.len() != vectors.len() {
            return Err(StoreError::InvalidInput(format!("{} texts but {} vectors", texts.len(), vectors.len())));
        }
        let others_dim = self.chunks.iter().find(|c| c.doc_id != doc_id).map(|c| c.vector.dim());
        let expected = others_dim.or_else(|| vectors.first().map(EmbeddingVector::dim));
        if let Some(dim) = expected {
            if let Some(bad) = vectors.iter().find(|v| v.dim() != dim) {
                return Err(StoreError::InvalidInput(format!(
                    "vector dimension {} does not match store dimension {dim}",
                    bad.dim()
                )));
            }
        }
        self.chunks.retain(|c| c.doc_id != doc_id);
        let added = texts.len();
        self.chunks.extend(texts.iter().zip(vectors).enumerate().map(|(i, (text, vector))| KnowledgeChunk {
            doc_id: doc_id.to_string(),
            chunk_index: i,
            text: text.clone(),
            vector,
        }));
        Ok(added)
    }

    /// Embeds `texts` and stores them as the chunks of `doc_id`.
    pub fn upsert_chunks(&mut self, doc_id: &str, texts: &[String], embedder: &dyn Embedder) -> Result<usize, StoreError> {
        if let Some(dim) = self.dim() {
            let only_this_doc = self.chunks.iter().all(|c| c.doc_id == doc_id);
            if dim != embedder.dim() && !only_this_doc {
                return Err(StoreError::InvalidInput(format!(
                    "embedder dimension {} does not match store dimension {dim}",
                    embedder.dim()
                )));
            }
        }
        if texts.is_empty() {
            self.chunks.retain(|c| c.doc_id != doc_id);
            return Ok(0);
        }
        let vectors = embedder.embed_batch(texts)?;
        self.replace_document(doc_id, texts, vectors)
    }

    /// Exact top-`k` by cosine similarity.
    pub fn query(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<StoreQueryHit>, StoreError> {
        if k == 0 {
            return Err(StoreError::InvalidInput("k must be at least 1".into()));
        }
        if self.chunks.is_empty() {
            return Err(StoreError::EmptyStore);
        }
        let mut scored = self
            .chunks
            .iter()
            .map(|c| cosine_similarity(query, &c.vector).map(|s| (s, c)))
            .collect::<Result<Vec<_>, _>>()?;
        scored.sort_by(|(sa, a), (sb, b)| hit_order(*sa, a, *sb, b));
        Ok(scored
            .into_iter()
            .take(k)
            .map(|(similarity, chunk)| StoreQueryHit { chunk: chunk.clone(), similarity })
            .collect())
    }

    pub fn save(&self, path: &Path) -> Result<(), StoreError> {
        let io_err = |source| StoreError::Io { path: path.display().to_string(), source };
        let file = fs::File::create(path).map_err(io_err)?;
        let mut out = BufWriter::new(file);
        for chunk in &self.chunks {
            let line = serde_json::to_string(chunk).expect("chunks always serialize");
            writeln!(out, "{line}").map_err(io_err)?;
        }
        out.flush().map_err(io_err)
    }

    pub fn load(path: &Path) -> Result<Self, StoreError> {
        let text = fs::read_to_string(path).map_err(|source| StoreError::Io { path: path.display().to_string(), source })?;
        let mut store = VectorStore::new();
        let mut seen = std::collections::HashSet::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let corrupt = |message: String| StoreError::Corrupt { line: line_no, message };
            let chunk: KnowledgeChunk = serde_json::from_str(line).map_err(|e| corrupt(e.to_string()))?;
            if let Some(dim) = store.dim() {
                if chunk.vector.dim() != dim {
                    return Err(corrupt(format!("vector dimension {} differs from {dim}", chunk.vector.dim())));
                }
            }
            if chunk.vector.values().iter().any(|v| !v.is_finite()) {
                return Err(corrupt("non-finite vector component".into()));
            }
            if !seen.insert((chunk.doc_id.clone(), chunk.chunk_index)) {
                return Err(corrupt(format!("duplicate chunk ({}, {})", chunk.doc_id, chunk.chunk_index)));
            }
            store.chunks.push(chunk);
        }
        Ok(store)
    }
}

pub fn save_store(store: &VectorStore, path: &Path) -> Result<(), StoreError> {
    store.save(path)
}

pub fn load_store(path: &Path) -> Result<VectorStore, StoreError> {
    VectorStore::load(path)
}
