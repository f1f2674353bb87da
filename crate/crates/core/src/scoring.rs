//! Faith score and multi-reference verification.
//!
//! The faith score of a candidate answer against one reference is a weighted
//! sum of unigram precision, unigram recall and the (capped) average word
//! length of the candidate:
//!
//! ```text
//! S = alpha * P + beta * Rcl + gamma * min(1, AWL / awl_cap)
//! ```
//!
//! Overlap is the clipped multiset intersection of lowercase alphanumeric
//! tokens, as in ROUGE-1. The multi-reference score is the maximum of `S`
//! over all references; a guess whose best score falls below the threshold
//! is replaced by the best reference.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_AWL_CAP: f64 = 10.0;
pub const DEFAULT_MAX_REFERENCE_TOKENS: usize = 512;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    #[error("candidate answer has no word tokens")]
    EmptyCandidate,
    #[error("no references to score against")]
    NoReferences,
    #[error("invalid weights ({alpha}, {beta}, {gamma}): must be non-negative and sum to 1")]
    InvalidWeights { alpha: f64, beta: f64, gamma: f64 },
    #[error("invalid scoring parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    alpha: f64,
    beta: f64,
    gamma: f64,
}

impl Weights {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self, ScoreError> {
        let ok = [alpha, beta, gamma].iter().all(|w| w.is_finite() && *w >= 0.0)
            && (alpha + beta + gamma - 1.0).abs() <= 1e-9;
        if ok {
            Ok(Weights { alpha, beta, gamma })
        } else {
            Err(ScoreError::InvalidWeights { alpha, beta, gamma })
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

impl Default for Weights {
    fn default() -> Self {
        Weights { alpha: 0.4, beta: 0.4, gamma: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenList {
    pub tokens: Vec<String>,
}

impl TokenList {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Lowercases and splits on every non-alphanumeric character.
pub fn tokenize(text: &str) -> TokenList {
    let tokens = text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect();
    TokenList { tokens }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaithScore {
    pub p: f64,
    pub rcl: f64,
    pub awl_norm: f64,
    pub s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationOutcome {
    pub mrfs: f64,
    pub best_ref_index: usize,
    pub corrected: bool,
    pub replacement: Option<String>,
}

fn clipped_overlap(candidate: &[String], reference: &[String]) -> usize {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in reference {
        *counts.entry(t.as_str()).or_default() += 1;
    }
    candidate
        .iter()
        .filter(|t| match counts.get_mut(t.as_str()) {
            Some(n) if *n > 0 => {
                *n -= 1;
                true
            }
            _ => false,
        })
        .count()
}

/// Scoring parameters shared by every verification in a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scorer {
    pub weights: Weights,
    pub awl_cap: f64,
    /// References are cut to this many tokens before scoring.
    pub max_reference_tokens: usize,
}

impl Default for Scorer {
    fn default() -> Self {
        Scorer {
            weights: Weights::default(),
            awl_cap: DEFAULT_AWL_CAP,
            max_reference_tokens: DEFAULT_MAX_REFERENCE_TOKENS,
        }
    }
}

impl Scorer {
    pub fn new(weights: Weights, awl_cap: f64, max_reference_tokens: usize) -> Result<Self, ScoreError> {
        if !(awl_cap.is_finite() && awl_cap > 0.0) {
            return Err(ScoreError::InvalidParameter(format!("awl_cap must be positive, got {awl_cap}")));
        }
        if max_reference_tokens == 0 {
            return Err(ScoreError::InvalidParameter("max_reference_tokens must be at least 1".into()));
        }
        Ok(Scorer { weights, awl_cap, max_reference_tokens })
    }

    pub fn with_weights(weights: Weights) -> Self {
        Scorer { weights, ..Scorer::default() }
    }

    fn score_tokens(&self, cand: &[String], reference: &[String]) -> FaithScore {
        let reference = &reference[..reference.len().min(self.max_reference_tokens)];
        let overlap = clipped_overlap(cand, reference) as f64;
        let p = overlap / cand.len() as f64;
        let rcl = if reference.is_empty() { 0.0 } else { overlap / reference.len() as f64 };
        let mean_len = cand.iter().map(|t| t.chars().count()).sum::<usize>() as f64 / cand.len() as f64;
        let awl_norm = (mean_len / self.awl_cap).min(1.0);
        let w = &self.weights;
        FaithScore { p, rcl, awl_norm, s: w.alpha * p + w.beta * rcl + w.gamma * awl_norm }
    }

    pub fn faith_score(&self, candidate: &str, reference: &str) -> Result<FaithScore, ScoreError> {
        let cand = tokenize(candidate);
        if cand.is_empty() {
            return Err(ScoreError::EmptyCandidate);
        }
        Ok(self.score_tokens(&cand.tokens, &tokenize(reference).tokens))
    }

    /// Best score over `references` and the smallest index achieving it.
    pub fn mrfs<S: AsRef<str>>(&self, candidate: &str, references: &[S]) -> Result<(f64, usize), ScoreError> {
        if references.is_empty() {
            return Err(ScoreError::NoReferences);
        }
        let cand = tokenize(candidate);
        if cand.is_empty() {
            return Err(ScoreError::EmptyCandidate);
        }
        let mut best = (f64::NEG_INFINITY, 0);
        for (k, r) in references.iter().enumerate() {
            let s = self.score_tokens(&cand.tokens, &tokenize(r.as_ref()).tokens).s;
            if s > best.0 {
                best = (s, k);
            }
        }
        Ok(best)
    }

    pub fn verify_answer<S: AsRef<str>>(
        &self,
        guess: &str,
        references: &[S],
        threshold: f64,
    ) -> Result<VerificationOutcome, ScoreError> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(ScoreError::InvalidParameter(format!("threshold {threshold} outside [0, 1]")));
        }
        let (mrfs, best_ref_index) = self.mrfs(guess, references)?;
        let corrected = mrfs < threshold;
        Ok(VerificationOutcome {
            mrfs,
            best_ref_index,
            corrected,
            replacement: corrected.then(|| references[best_ref_index].as_ref().to_string()),
        })
    }
}

pub fn faith_score(candidate: &str, reference: &str, weights: Weights) -> Result<FaithScore, ScoreError> {
    Scorer::with_weights(weights).faith_score(candidate, reference)
}

pub fn mrfs<S: AsRef<str>>(candidate: &str, references: &[S], weights: Weights) -> Result<(f64, usize), ScoreError> {
    Scorer::with_weights(weights).mrfs(candidate, references)
}

pub fn verify_answer<S: AsRef<str>>(
    guess: &str,
    references: &[S],
    threshold: f64,
    weights: Weights,
) -> Result<VerificationOutcome, ScoreError> {
    Scorer::with_weights(weights).verify_answer(guess, references, threshold)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s).tokens
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(toks("The cat, the CAT!"), ["the", "cat", "the", "cat"]);
        assert!(toks("").is_empty());
        assert_eq!(toks("GPT-3.5"), ["gpt", "3", "5"]);
        assert_eq!(toks("Ünïcode Straße"), ["ünïcode", "straße"]);
    }

    #[test]
    fn worked_example() {
        let f = faith_score("the cat sat", "the cat", Weights::default()).unwrap();
        assert!((f.p - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(f.rcl, 1.0);
        assert!((f.awl_norm - 0.3).abs() < 1e-12);
        assert!((f.s - 0.726_666_666_666_666_6).abs() < 1e-12);
    }

    #[test]
    fn identical_and_disjoint() {
        let f = faith_score("a quick fox", "a quick fox", Weights::default()).unwrap();
        assert_eq!((f.p, f.rcl), (1.0, 1.0));
        let f = faith_score("alpha beta", "gamma delta", Weights::default()).unwrap();
        assert_eq!((f.p, f.rcl), (0.0, 0.0));
        assert!((f.s - 0.2 * 0.45).abs() < 1e-12);
    }

    #[test]
    fn empty_reference_has_zero_recall() {
        let f = faith_score("word", "!!!", Weights::default()).unwrap();
        assert_eq!(f.rcl, 0.0);
    }

    #[test]
    fn empty_candidate_rejected() {
        assert_eq!(faith_score("  ,", "x", Weights::default()), Err(ScoreError::EmptyCandidate));
    }

    #[test]
    fn mrfs_examples() {
        let (s, k) = mrfs("the cat sat", &["the cat", "a dog"], Weights::default()).unwrap();
        assert!((s - 0.726_666_666_666_666_6).abs() < 1e-12);
        assert_eq!(k, 0);
        let (s, k) = mrfs("hello world", &["nothing", "hello world"], Weights::default()).unwrap();
        assert_eq!(k, 1);
        assert!((s - (0.4 + 0.4 + 0.2 * 0.5)).abs() < 1e-12);
        let none: [&str; 0] = [];
        assert_eq!(mrfs("x", &none, Weights::default()), Err(ScoreError::NoReferences));
    }

    #[test]
    fn mrfs_ties_pick_first() {
        let (_, k) = mrfs("x y", &["z", "x y", "x y"], Weights::default()).unwrap();
        assert_eq!(k, 1);
    }

    #[test]
    fn verify_examples() {
        let w = Weights::default();
        let kept = verify_answer("the cat sat", &["the cat", "a dog"], 0.5, w).unwrap();
        assert!(!kept.corrected && kept.replacement.is_none());
        assert!((kept.mrfs - 0.7267).abs() < 1e-4);

        let fixed = verify_answer("alpha beta", &["gamma delta"], 0.5, w).unwrap();
        assert!(fixed.corrected);
        assert_eq!(fixed.replacement.as_deref(), Some("gamma delta"));
        assert!((fixed.mrfs - 0.09).abs() < 1e-12);

        assert!(!verify_answer("x", &["x"], 0.0, w).unwrap().corrected);
        assert!(verify_answer("x", &["x"], 1.5, w).is_err());
    }

    #[test]
    fn reference_truncation() {
        let scorer = Scorer::new(Weights::default(), 10.0, 2).unwrap();
        let f = scorer.faith_score("a b", "a b c d e f").unwrap();
        assert_eq!(f.rcl, 1.0);
    }

    #[test]
    fn weights_validation() {
        assert!(Weights::new(0.5, 0.5, 0.0).is_ok());
        assert!(Weights::new(0.5, 0.5, 0.1).is_err());
        assert!(Weights::new(-0.1, 0.6, 0.5).is_err());
        assert!(Weights::new(f64::NAN, 0.5, 0.5).is_err());
    }
}
