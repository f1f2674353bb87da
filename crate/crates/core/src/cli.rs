//! Command-line front end. [`run`] takes its arguments and output streams
//! explicitly so it can be driven from tests.
//!
//! Exit codes: 0 success, 1 other failure, 2 usage/config/input error,
//! 3 the question could not be answered, 4 backend unavailable or rejected.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::bench::{evaluate, load_dataset, mislead_rate, BenchError};
use crate::config::{ConfigError, EngineConfig};
use crate::executor::{RunError, Trace};
use crate::vectorstore::{chunk_document, VectorStore};

pub const DEFAULT_CONFIG_FILE: &str = "coa.toml";

#[derive(Debug, Parser)]
#[command(name = "coa", version, about = "Retrieval-grounded question answering over action chains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[allow(clippy::enum_variant_names)]
enum Ablation {
    #[value(name = "no_actions", alias = "no-actions")]
    NoActions,
    #[value(name = "no_verification", alias = "no-verification")]
    NoVerification,
    #[value(name = "no_imputation", alias = "no-imputation")]
    NoImputation,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Answer one question.
    Ask {
        question: String,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write the full JSON trace here.
        #[arg(long)]
        trace_out: Option<PathBuf>,
        /// Print one line per chain node after the answer.
        #[arg(long)]
        show_chain: bool,
        #[arg(long, value_enum)]
        ablation: Vec<Ablation>,
    },
    /// Chunk and embed every .txt/.md file under a directory into a store.
    Index {
        dir: PathBuf,
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Evaluate a JSONL dataset of {"id", "question", "answers"} records.
    Bench {
        dataset: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Measure the verification mislead rate instead of accuracy.
        #[arg(long)]
        mislead: bool,
        #[arg(long, value_enum)]
        ablation: Vec<Ablation>,
        /// Directory for results.jsonl and summary.json.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Also write summary.csv.
        #[arg(long)]
        csv: bool,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Summarize a trace file written by `ask --trace-out`.
    Trace { path: PathBuf },
}

#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Failure { code, message: message.into() }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::new(2, e.to_string())
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        let code = match e {
            RunError::InvalidInput(_) => 2,
            RunError::QuestionFailed { .. } => 3,
            RunError::Backend(_) => 4,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<BenchError> for Failure {
    fn from(e: BenchError) -> Self {
        let code = match e {
            BenchError::Load { .. } | BenchError::Io { .. } | BenchError::Precondition(_) => 2,
            BenchError::Aborted { .. } => 4,
        };
        Failure::new(code, e.to_string())
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::new(2, format!("{}: {e}", path.display()))
}

fn load_config(path: Option<&Path>) -> Result<EngineConfig, ConfigError> {
    match path {
        Some(p) => EngineConfig::load(p),
        None if Path::new(DEFAULT_CONFIG_FILE).exists() => EngineConfig::load(Path::new(DEFAULT_CONFIG_FILE)),
        None => Ok(EngineConfig::default()),
    }
}

fn apply_ablations(config: &mut EngineConfig, ablations: &[Ablation]) {
    for a in ablations {
        match a {
            Ablation::NoActions => config.ablations.no_actions = true,
            Ablation::NoVerification => config.ablations.no_verification = true,
            Ablation::NoImputation => config.ablations.no_imputation = true,
        }
    }
}

/// One line per node: index, action, sub-question, resolved answer, flags.
pub fn render_trace_nodes(trace: &Trace) -> String {
    let mut out = String::new();
    for (node, event) in trace.chain_after.nodes.iter().zip(&trace.per_node_events) {
        let answer = node.resolved_answer.as_deref().unwrap_or("-");
        let mrfs = event.mrfs.map(|m| format!("{m:.4}")).unwrap_or_else(|| "-".into());
        let mut flags = Vec::new();
        if event.corrected {
            flags.push("corrected");
        }
        if event.imputed {
            flags.push("imputed");
        }
        if event.low_confidence {
            flags.push("low-confidence");
        }
        let flags = if flags.is_empty() { "-".to_string() } else { flags.join(",") };
        out.push_str(&format!(
            "[{}] {} | {} | {} | items={} mrfs={} {}\n",
            node.index,
            node.action.markup_name(),
            node.sub_question,
            answer.replace('\n', " "),
            event.items_retrieved,
            mrfs,
            flags
        ));
    }
    out
}

fn write_out(out: &mut dyn Write, text: &str) -> Result<(), Failure> {
    out.write_all(text.as_bytes()).map_err(|e| Failure::new(1, format!("cannot write output: {e}")))
}

fn ask(
    question: &str,
    config: Option<&Path>,
    trace_out: Option<&Path>,
    show_chain: bool,
    ablations: &[Ablation],
    out: &mut dyn Write,
) -> Result<(), Failure> {
    let mut config = load_config(config)?;
    apply_ablations(&mut config, ablations);
    let cfg = config.run_config()?;
    let engine = config.build_engine()?;
    let answer = engine.run_question(question, &cfg)?;
    if let Some(path) = trace_out {
        fs::write(path, answer.trace.to_json() + "\n").map_err(|e| io_failure(path, e))?;
    }
    write_out(out, &format!("{}\n", answer.text))?;
    if show_chain {
        write_out(out, &render_trace_nodes(&answer.trace))?;
    }
    Ok(())
}

fn collect_documents(dir: &Path, found: &mut Vec<PathBuf>) -> std::io::Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
    entries.sort();
    for path in entries {
        if path.is_dir() {
            collect_documents(&path, found)?;
        } else if matches!(path.extension().and_then(|e| e.to_str()), Some("txt" | "md")) {
            found.push(path);
        }
    }
    Ok(())
}

fn index(dir: &Path, store_path: &Path, config: Option<&Path>, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), Failure> {
    let config = load_config(config)?;
    let (_, embedder) = config.build_backends()?;
    let mut store = if store_path.exists() {
        VectorStore::load(store_path).map_err(|e| Failure::new(2, e.to_string()))?
    } else {
        VectorStore::new()
    };
    let mut docs = Vec::new();
    collect_documents(dir, &mut docs).map_err(|e| io_failure(dir, e))?;
    if docs.is_empty() {
        return Err(Failure::new(2, format!("no .txt or .md files under {}", dir.display())));
    }
    let mut total = 0;
    for path in &docs {
        let text = fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
        let chunks = chunk_document(&text, config.chunking.chunk_chars, config.chunking.overlap_chars)
            .map_err(|e| Failure::new(2, e.to_string()))?;
        if chunks.is_empty() {
            let _ = writeln!(err, "skipping empty document {}", path.display());
            continue;
        }
        let doc_id = path.strip_prefix(dir).unwrap_or(path).to_string_lossy().replace('\\', "/");
        store.upsert_chunks(&doc_id, &chunks, embedder.as_ref()).map_err(|e| match e {
            crate::vectorstore::StoreError::Backend(b) => Failure::new(4, b.to_string()),
            other => Failure::new(1, other.to_string()),
        })?;
        total += chunks.len();
    }
    store.save(store_path).map_err(|e| Failure::new(2, e.to_string()))?;
    write_out(out, &format!("indexed {} document(s), {} chunk(s); store holds {} chunk(s)\n", docs.len(), total, store.len()))
}

#[allow(clippy::too_many_arguments)]
fn bench(
    dataset: &Path,
    config: Option<&Path>,
    mislead: bool,
    ablations: &[Ablation],
    out_dir: &Path,
    csv: bool,
    workers: Option<usize>,
    out: &mut dyn Write,
) -> Result<(), Failure> {
    let mut config = load_config(config)?;
    apply_ablations(&mut config, ablations);
    let cfg = config.run_config()?;
    let engine = config.build_engine()?;
    let records = load_dataset(dataset)?;
    let workers = workers.unwrap_or(config.engine.bench_workers);
    if workers == 0 {
        return Err(Failure::new(2, "--workers must be at least 1"));
    }
    fs::create_dir_all(out_dir).map_err(|e| io_failure(out_dir, e))?;
    if mislead {
        let report = mislead_rate(&engine, &records, &cfg, workers)?;
        let path = out_dir.join("mislead.json");
        let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
        fs::write(&path, json).map_err(|e| io_failure(&path, e))?;
        return write_out(
            out,
            &format!(
                "{:<16} {}\n{:<16} {:.4}\n{:<16} {}\n",
                "n",
                report.n,
                "mislead_rate",
                report.mislead_rate,
                "flipped",
                if report.flipped_ids.is_empty() { "-".to_string() } else { report.flipped_ids.join(",") }
            ),
        );
    }
    let report = match evaluate(&engine, &records, &cfg, workers) {
        Ok(r) => r,
        Err(BenchError::Aborted { partial, source }) => {
            partial.write_results(&out_dir.join("results.jsonl"))?;
            return Err(Failure::new(4, format!("aborted after {} record(s): {source}", partial.results.len())));
        }
        Err(e) => return Err(e.into()),
    };
    report.write_results(&out_dir.join("results.jsonl"))?;
    report.write_summary(&out_dir.join("summary.json"))?;
    if csv {
        report.write_summary_csv(&out_dir.join("summary.csv"))?;
    }
    write_out(out, &report.metrics.to_table())
}

fn trace(path: &Path, out: &mut dyn Write) -> Result<(), Failure> {
    let text = fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
    let trace: Trace = serde_json::from_str(&text).map_err(|e| Failure::new(2, format!("{}: {e}", path.display())))?;
    let mut summary = format!(
        "question: {}\nchain attempts: {}\nchat calls: {}  embed calls: {}  wall time: {} ms\n",
        trace.question, trace.chain_attempts, trace.usage.chat_calls, trace.usage.embed_calls, trace.wall_time_ms
    );
    summary.push_str(&render_trace_nodes(&trace));
    write_out(out, &summary)
}

/// Runs the CLI and returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let rendered = e.render().to_string();
            let _ = if code == 0 { out.write_all(rendered.as_bytes()) } else { err.write_all(rendered.as_bytes()) };
            return code;
        }
    };
    let result = match &cli.command {
        Command::Ask { question, config, trace_out, show_chain, ablation } => {
            ask(question, config.as_deref(), trace_out.as_deref(), *show_chain, ablation, out)
        }
        Command::Index { dir, store, config } => index(dir, store, config.as_deref(), out, err),
        Command::Bench { dataset, config, mislead, ablation, out_dir, csv, workers } => {
            bench(dataset, config.as_deref(), *mislead, ablation, out_dir, *csv, *workers, out)
        }
        Command::Trace { path } => trace(path, out),
    };
    match result {
        Ok(()) => 0,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}
