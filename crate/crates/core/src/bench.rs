//! QA benchmark harness: dataset loading, cover-EM scoring, aggregate
//! metrics and the verification mislead rate.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::BackendError;
use crate::executor::{Ablations, Engine, FinalAnswer, RunConfig, RunError};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("dataset {path} line {line}: {message}")]
    Load { path: String, line: usize, message: String },
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("aborted after {} record(s): {source}", partial.results.len())]
    Aborted { partial: Box<EvalReport>, source: BackendError },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QARecord {
    pub id: String,
    pub question: String,
    #[serde(rename = "answers")]
    pub gold_answers: Vec<String>,
}

/// Reads `{"id", "question", "answers": [...]}` lines.
pub fn load_dataset(path: &Path) -> Result<Vec<QARecord>, BenchError> {
    let display = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| BenchError::Io { path: display.clone(), source })?;
    let mut records = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| BenchError::Load { path: display.clone(), line: line_no, message };
        let record: QARecord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        if record.question.trim().is_empty() {
            return Err(err("question is empty".into()));
        }
        if record.gold_answers.is_empty() || record.gold_answers.iter().any(|a| a.trim().is_empty()) {
            return Err(err("answers must be a nonempty list of nonempty strings".into()));
        }
        if !ids.insert(record.id.clone()) {
            return Err(err(format!("duplicate id `{}`", record.id)));
        }
        records.push(record);
    }
    Ok(records)
}

/// Lowercase, punctuation removed, whitespace collapsed.
pub fn normalize_answer(text: &str) -> String {
    let stripped: String = text
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect();
    stripped.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// True when the normalized answer contains any normalized gold answer.
pub fn cover_em<S: AsRef<str>>(generated: &str, gold_answers: &[S]) -> bool {
    let haystack = normalize_answer(generated);
    gold_answers.iter().any(|g| {
        let needle = normalize_answer(g.as_ref());
        if needle.is_empty() {
            // Gold made only of punctuation: compare verbatim.
            !g.as_ref().is_empty() && generated.contains(g.as_ref())
        } else {
            haystack.contains(&needle)
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordResult {
    pub id: String,
    pub final_answer: Option<String>,
    pub correct: bool,
    pub steps: Option<usize>,
    pub chat_calls: u64,
    pub embed_calls: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub accuracy: f64,
    pub avg_steps: f64,
    pub mislead_rate: Option<f64>,
    pub avg_chat_calls: f64,
    pub avg_embed_calls: f64,
    pub ablations: Ablations,
}

impl Metrics {
    pub fn from_results(results: &[RecordResult], ablations: Ablations) -> Self {
        let n = results.len();
        let mean = |total: f64, count: usize| if count == 0 { 0.0 } else { total / count as f64 };
        let steps: Vec<usize> = results.iter().filter_map(|r| r.steps).collect();
        Metrics {
            n,
            accuracy: mean(results.iter().filter(|r| r.correct).count() as f64, n),
            avg_steps: mean(steps.iter().sum::<usize>() as f64, steps.len()),
            mislead_rate: None,
            avg_chat_calls: mean(results.iter().map(|r| r.chat_calls as f64).sum(), n),
            avg_embed_calls: mean(results.iter().map(|r| r.embed_calls as f64).sum(), n),
            ablations,
        }
    }

    pub fn to_csv(&self) -> String {
        let mislead = self.mislead_rate.map(|m| m.to_string()).unwrap_or_default();
        format!(
            "n,accuracy,avg_steps,mislead_rate,avg_chat_calls,avg_embed_calls,no_actions,no_verification,no_imputation\n\
             {},{},{},{},{},{},{},{},{}\n",
            self.n,
            self.accuracy,
            self.avg_steps,
            mislead,
            self.avg_chat_calls,
            self.avg_embed_calls,
            self.ablations.no_actions,
            self.ablations.no_verification,
            self.ablations.no_imputation
        )
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<16} {}\n", "records", self.n));
        out.push_str(&format!("{:<16} {:.4}\n", "accuracy", self.accuracy));
        out.push_str(&format!("{:<16} {:.2}\n", "avg_steps", self.avg_steps));
        if let Some(m) = self.mislead_rate {
            out.push_str(&format!("{:<16} {:.4}\n", "mislead_rate", m));
        }
        out.push_str(&format!("{:<16} {:.2}\n", "avg_chat_calls", self.avg_chat_calls));
        out.push_str(&format!("{:<16} {:.2}\n", "avg_embed_calls", self.avg_embed_calls));
        let a = self.ablations;
        let active: Vec<&str> = [
            (a.no_actions, "no_actions"),
            (a.no_verification, "no_verification"),
            (a.no_imputation, "no_imputation"),
        ]
        .into_iter()
        .filter_map(|(on, name)| on.then_some(name))
        .collect();
        if !active.is_empty() {
            out.push_str(&format!("{:<16} {}\n", "ablation", active.join(",")));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metrics: Metrics,
    pub results: Vec<RecordResult>,
}

impl EvalReport {
    pub fn results_jsonl(&self) -> String {
        self.results
            .iter()
            .map(|r| serde_json::to_string(r).expect("results serialize") + "\n")
            .collect()
    }

    pub fn write_results(&self, path: &Path) -> Result<(), BenchError> {
        write_file(path, self.results_jsonl().as_bytes())
    }

    pub fn write_summary(&self, path: &Path) -> Result<(), BenchError> {
        let json = serde_json::to_string_pretty(&self.metrics).expect("metrics serialize") + "\n";
        write_file(path, json.as_bytes())
    }

    pub fn write_summary_csv(&self, path: &Path) -> Result<(), BenchError> {
        write_file(path, self.metrics.to_csv().as_bytes())
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), BenchError> {
    let io = |source| BenchError::Io { path: path.display().to_string(), source };
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(bytes).map_err(io)
}

fn record_result(record: &QARecord, outcome: &Result<FinalAnswer, RunError>) -> RecordResult {
    match outcome {
        Ok(answer) => RecordResult {
            id: record.id.clone(),
            final_answer: Some(answer.text.clone()),
            correct: cover_em(&answer.text, &record.gold_answers),
            steps: Some(answer.trace.chain_before.len()),
            chat_calls: answer.trace.usage.chat_calls,
            embed_calls: answer.trace.usage.embed_calls,
            error: None,
        },
        Err(e) => RecordResult {
            id: record.id.clone(),
            final_answer: None,
            correct: false,
            steps: None,
            chat_calls: match e {
                RunError::QuestionFailed { attempts, .. } => *attempts as u64,
                _ => 0,
            },
            embed_calls: 0,
            error: Some(e.to_string()),
        },
    }
}

/// Applies `f` to every index with up to `workers` threads, stopping early
/// once `f` reports a backend failure. Returns completed slots in order.
fn run_parallel<T: Send>(
    n: usize,
    workers: usize,
    f: impl Fn(usize) -> Result<T, BackendError> + Sync,
) -> (Vec<Option<T>>, Option<BackendError>) {
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..n).map(|_| None).collect());
    let failure: Mutex<Option<(usize, BackendError)>> = Mutex::new(None);
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let work = || loop {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        let i = next.fetch_add(1, Ordering::SeqCst);
        if i >= n {
            break;
        }
        match f(i) {
            Ok(v) => slots.lock().unwrap()[i] = Some(v),
            Err(e) => {
                stop.store(true, Ordering::SeqCst);
                let mut first = failure.lock().unwrap();
                if first.as_ref().is_none_or(|(j, _)| i < *j) {
                    *first = Some((i, e));
                }
            }
        }
    };
    let workers = workers.clamp(1, n.max(1));
    if workers == 1 {
        work();
    } else {
        thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(work);
            }
        });
    }
    (slots.into_inner().unwrap(), failure.into_inner().unwrap().map(|(_, e)| e))
}

fn backend_failure(outcome: &Result<FinalAnswer, RunError>) -> Option<BackendError> {
    match outcome {
        Err(RunError::Backend(e)) => Some(e.clone()),
        _ => None,
    }
}

/// Runs every record and aggregates. A backend failure aborts the run and
/// returns what finished so far inside [`BenchError::Aborted`].
pub fn evaluate(engine: &Engine, records: &[QARecord], cfg: &RunConfig, workers: usize) -> Result<EvalReport, BenchError> {
    if records.is_empty() {
        return Err(BenchError::Precondition("no records to evaluate".into()));
    }
    cfg.validate().map_err(|e| BenchError::Precondition(e.to_string()))?;
    let (slots, failure) = run_parallel(records.len(), workers, |i| {
        let outcome = engine.run_question(&records[i].question, cfg);
        match backend_failure(&outcome) {
            Some(e) => Err(e),
            None => Ok(record_result(&records[i], &outcome)),
        }
    });
    let results: Vec<RecordResult> = slots.into_iter().flatten().collect();
    let report = EvalReport { metrics: Metrics::from_results(&results, cfg.ablations), results };
    match failure {
        Some(source) => Err(BenchError::Aborted { partial: Box::new(report), source }),
        None => Ok(report),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MisleadReport {
    pub n: usize,
    pub mislead_rate: f64,
    pub flipped_ids: Vec<String>,
    pub accuracy_without_verification: f64,
    pub accuracy_with_verification: f64,
}

/// Fraction of records answered correctly without verification but
/// incorrectly with it. Both runs replay the same generated chain.
pub fn mislead_rate(engine: &Engine, records: &[QARecord], cfg: &RunConfig, workers: usize) -> Result<MisleadReport, BenchError> {
    if cfg.ablations.no_verification {
        return Err(BenchError::Precondition("mislead rate needs verification enabled".into()));
    }
    if records.is_empty() {
        return Err(BenchError::Precondition("no records to evaluate".into()));
    }
    cfg.validate().map_err(|e| BenchError::Precondition(e.to_string()))?;
    let unverified = RunConfig {
        ablations: Ablations { no_verification: true, ..cfg.ablations },
        ..cfg.clone()
    };
    let (slots, failure) = run_parallel(records.len(), workers, |i| {
        let record = &records[i];
        let generated = match engine.generate_chain(&record.question, cfg) {
            Ok(g) => g,
            Err(RunError::Backend(e)) => return Err(e),
            Err(_) => return Ok((false, false)),
        };
        let mut correct = [false; 2];
        for (slot, run_cfg) in correct.iter_mut().zip([&unverified, cfg]) {
            let outcome = engine.run_from_chain(&generated, run_cfg);
            if let Some(e) = backend_failure(&outcome) {
                return Err(e);
            }
            *slot = outcome.map(|a| cover_em(&a.text, &record.gold_answers)).unwrap_or(false);
        }
        Ok((correct[0], correct[1]))
    });
    if let Some(source) = failure {
        let results = Vec::new();
        let partial = EvalReport { metrics: Metrics::from_results(&results, cfg.ablations), results };
        return Err(BenchError::Aborted { partial: Box::new(partial), source });
    }
    let pairs: Vec<(bool, bool)> = slots.into_iter().map(|s| s.expect("all records ran")).collect();
    let n = records.len();
    let flipped_ids: Vec<String> = pairs
        .iter()
        .zip(records)
        .filter(|((off, on), _)| *off && !*on)
        .map(|(_, r)| r.id.clone())
        .collect();
    let frac = |count: usize| count as f64 / n as f64;
    Ok(MisleadReport {
        n,
        mislead_rate: frac(flipped_ids.len()),
        accuracy_without_verification: frac(pairs.iter().filter(|p| p.0).count()),
        accuracy_with_verification: frac(pairs.iter().filter(|p| p.1).count()),
        flipped_ids,
    })
}
