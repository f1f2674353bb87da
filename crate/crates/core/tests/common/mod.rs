//! Offline fixture suites with hand-planned outcomes.
//!
//! Every node's resolved answer is planned here without running the engine:
//! each search query has a single result, the knowledge store has three
//! chunks and the data source three records, so with top_k = 3 the evidence
//! set of every node is known. The final-answer prompt is then built from the
//! planned chain and scripted by hash. If the engine resolves any node
//! differently, the prompt hash misses, the mock echoes the prompt and the
//! answer is wrong.

#![allow(dead_code)]

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use coa::actions::{ActionSet, DataRecord, DataValue, FixtureSearch, SearchResult, StaticDataSource};
use coa::backends::{prompt_key, MockChat, MockEmbedder};
use coa::bench::QARecord;
use coa::chain::{build_chain_prompt, build_final_prompt, default_catalog, ActionChain, ActionNode, ActionType};
use coa::executor::{Ablations, Engine, RunConfig};
use coa::vectorstore::VectorStore;

pub const DIM: usize = 64;

pub const CHUNKS: [&str; 3] = [
    "The blue whale is the largest animal ever known to have lived.",
    "Mount Everest rises 8849 metres above sea level.",
    "Honey never spoils when sealed in an airtight jar.",
];
const CHUNK_GUESSES: [&str; 3] = ["blue whale largest animal", "Everest 8849 metres", "honey never spoils"];

const DATA: [(&str, f64, &str); 3] = [("brent crude", 82.5, "2024-05-01"), ("gold spot", 2300.1, "2024-05-01"), ("usd eur", 0.93, "2024-05-02")];

/// One planned question: four nodes (web, knowledge, data, unsolved web).
#[derive(Debug, Clone)]
pub struct Plan {
    pub id: String,
    pub question: String,
    pub gold: String,
    /// Node 1's page content contains its guess, so verification keeps it.
    pub node1_supported: bool,
    pub node4_code: String,
}

impl Plan {
    fn i(&self) -> usize {
        self.id.trim_start_matches('q').parse().unwrap()
    }

    pub fn sub(&self, node: usize) -> String {
        let i = self.i();
        match node {
            1 => format!("Which city hosts event {i}"),
            2 => format!("Which fact concerns item {i}"),
            3 => format!("What is the {} quote", DATA[i % 3].0),
            4 => format!("What is the code name of project {i}"),
            _ => unreachable!(),
        }
    }

    pub fn guess(&self, node: usize) -> Option<String> {
        let i = self.i();
        match node {
            1 => Some(format!("city{i}")),
            2 => Some(CHUNK_GUESSES[i % 3].to_string()),
            3 => Some(format!("{} {}", DATA[i % 3].0, DATA[i % 3].1)),
            4 => None,
            _ => unreachable!(),
        }
    }

    pub fn node1_content(&self) -> String {
        let i = self.i();
        let place = if self.node1_supported { format!("city{i}") } else { format!("town{i}") };
        format!("Event {i} takes place in {place} every spring.")
    }

    pub fn node4_content(&self) -> String {
        format!("Project {} was code named {} by its founders.", self.i(), self.node4_code)
    }

    pub fn chain_markup(&self) -> String {
        let actions = ["web-querying", "knowledge-encoding", "data-analyzing", "web-querying"];
        let mut out = String::new();
        for n in 1..=4 {
            out.push_str(&format!("[Node {n}]\nAction: {}\nSub: {}\n", actions[n - 1], self.sub(n)));
            match self.guess(n) {
                Some(g) => out.push_str(&format!("[Guess Answer] {g}\n")),
                None => out.push_str("[Unsolved Sub]\n"),
            }
        }
        out
    }

    /// Resolved answer of every node under `ablations`, planned by hand.
    pub fn resolved(&self, ablations: Ablations) -> [String; 4] {
        let node1 = if self.node1_supported || ablations.no_verification || ablations.no_actions {
            self.guess(1).unwrap()
        } else {
            self.node1_content()
        };
        let node4 = if ablations.no_imputation || ablations.no_actions { "unknown".to_string() } else { self.node4_content() };
        [node1, self.guess(2).unwrap(), self.guess(3).unwrap(), node4]
    }

    pub fn final_reply(&self, ablations: Ablations) -> String {
        format!("[Final Content] {}", self.resolved(ablations).join(" / "))
    }

    fn planned_chain(&self, ablations: Ablations) -> ActionChain {
        let actions = [ActionType::WebQuery, ActionType::KnowledgeEncode, ActionType::DataAnalyze, ActionType::WebQuery];
        let resolved = self.resolved(ablations);
        let nodes = (1..=4)
            .map(|n| {
                let mut node = ActionNode::new(n, actions[n - 1], self.sub(n), self.guess(n));
                node.resolved_answer = Some(resolved[n - 1].clone());
                node
            })
            .collect();
        ActionChain::new(self.question.clone(), nodes).unwrap()
    }

    pub fn record(&self) -> QARecord {
        QARecord { id: self.id.clone(), question: self.question.clone(), gold_answers: vec![self.gold.clone()] }
    }
}

pub const ABLATION_VARIANTS: [Ablations; 4] = [
    Ablations { no_actions: false, no_verification: false, no_imputation: false },
    Ablations { no_actions: false, no_verification: true, no_imputation: false },
    Ablations { no_actions: false, no_verification: false, no_imputation: true },
    Ablations { no_actions: true, no_verification: false, no_imputation: false },
];

pub struct Fixture {
    pub plans: Vec<Plan>,
    pub script: HashMap<String, String>,
    pub search: FixtureSearch,
    pub store: VectorStore,
    pub data: Vec<DataRecord>,
}

fn question_text(i: usize) -> String {
    format!("Q{i}: which code name did the founders of project {i} choose?")
}

/// Indices of the suite questions whose retrieved code name is wrong.
pub const SUITE_WRONG: [usize; 5] = [3, 8, 11, 16, 19];
/// The mislead-fixture record whose correct guess is overturned.
pub const MISLEAD_FLIPPED: usize = 6;

/// 20 questions, 4 nodes each, designed accuracy 15/20.
pub fn suite() -> Fixture {
    let plans = (0..20)
        .map(|i| Plan {
            id: format!("q{i}"),
            question: question_text(i),
            gold: format!("kappa{i}"),
            node1_supported: i % 2 == 0,
            node4_code: if SUITE_WRONG.contains(&i) { format!("omega{i}") } else { format!("kappa{i}") },
        })
        .collect();
    Fixture::from_plans(plans)
}

/// 10 questions answered correctly by their node-1 guess; verification
/// overturns exactly one of them.
pub fn mislead_suite() -> Fixture {
    let plans = (0..10)
        .map(|i| Plan {
            id: format!("q{i}"),
            question: question_text(i),
            gold: format!("city{i}"),
            node1_supported: i != MISLEAD_FLIPPED,
            node4_code: format!("kappa{i}"),
        })
        .collect();
    Fixture::from_plans(plans)
}

fn result(title: String, snippet: String, content: String, i: usize) -> SearchResult {
    SearchResult { title, snippet, url: format!("https://example.org/page/{i}"), page_content: Some(content) }
}

impl Fixture {
    pub fn from_plans(plans: Vec<Plan>) -> Fixture {
        let catalog = default_catalog();
        let mut script = HashMap::new();
        let mut search = FixtureSearch::new();
        for (i, plan) in plans.iter().enumerate() {
            let prompt = build_chain_prompt(&plan.question, &catalog).unwrap();
            script.insert(prompt_key(&prompt.role_messages), plan.chain_markup());
            for ablations in ABLATION_VARIANTS {
                let final_prompt = build_final_prompt(&plan.planned_chain(ablations), &plan.question).unwrap();
                script.insert(prompt_key(&final_prompt.role_messages), plan.final_reply(ablations));
            }
            search.insert(plan.sub(1), vec![result(plan.sub(1), plan.guess(1).unwrap(), plan.node1_content(), 2 * i)]);
            search.insert(
                plan.sub(4),
                vec![result(format!("Project {i}"), "founders and history".into(), plan.node4_content(), 2 * i + 1)],
            );
        }
        let embedder = MockEmbedder::new(DIM);
        let mut store = VectorStore::new();
        let chunks: Vec<String> = CHUNKS.iter().map(|s| s.to_string()).collect();
        store.upsert_chunks("facts.txt", &chunks, &embedder).unwrap();
        let data = DATA
            .iter()
            .map(|(k, v, ts)| {
                let mut r = DataRecord::new(*k, DataValue::Number(*v));
                r.as_of = Some(ts.to_string());
                r
            })
            .collect();
        Fixture { plans, script, search, store, data }
    }

    pub fn records(&self) -> Vec<QARecord> {
        self.plans.iter().map(Plan::record).collect()
    }

    pub fn chat(&self) -> MockChat {
        MockChat::from_script(self.script.clone())
    }

    pub fn actions(&self) -> ActionSet {
        ActionSet::default()
            .with_search(self.search.clone())
            .with_store(self.store.clone())
            .with_data(StaticDataSource::new(self.data.clone()).unwrap())
    }

    pub fn engine(&self) -> Engine {
        Engine::new(Arc::new(self.chat()), Arc::new(MockEmbedder::new(DIM)), self.actions())
    }

    /// Engine plus a handle on its chat backend for call counting.
    pub fn engine_with_chat(&self) -> (Engine, Arc<MockChat>) {
        let chat = Arc::new(self.chat());
        (Engine::new(chat.clone(), Arc::new(MockEmbedder::new(DIM)), self.actions()), chat)
    }

    pub fn run_config(&self, ablations: Ablations, max_parallel_nodes: usize) -> RunConfig {
        RunConfig { ablations, max_parallel_nodes, ..RunConfig::default() }
    }

    /// Writes every fixture file plus a `coa.toml` pointing at them and
    /// returns the config path.
    pub fn write_files(&self, dir: &Path) -> PathBuf {
        fs::write(dir.join("script.json"), serde_json::to_string_pretty(&self.script).unwrap()).unwrap();
        fs::write(dir.join("search.jsonl"), self.search.to_jsonl()).unwrap();
        self.store.save(&dir.join("store.jsonl")).unwrap();
        let mut csv = String::from("key,value,as_of\n");
        for r in &self.data {
            csv.push_str(&format!("{},{},{}\n", r.key, r.value, r.as_of.as_deref().unwrap_or("")));
        }
        fs::write(dir.join("data.csv"), csv).unwrap();
        let dataset: String = self.records().iter().map(|r| serde_json::to_string(r).unwrap() + "\n").collect();
        fs::write(dir.join("dataset.jsonl"), dataset).unwrap();
        let config = format!(
            "[backend]\nkind = \"mock\"\nmock_script = \"script.json\"\nembedding_dim = {DIM}\n\n\
             [search]\nkind = \"fixture\"\nfixture = \"search.jsonl\"\n\n\
             [knowledge]\nstore = \"store.jsonl\"\n\n\
             [data]\ncsv = \"data.csv\"\n"
        );
        let path = dir.join("coa.toml");
        fs::write(&path, config).unwrap();
        path
    }
}
