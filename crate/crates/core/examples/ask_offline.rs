//! Answer a question end to end with a custom chat backend and offline retrieval.
//!
//! `RuleModel` stands in for an LLM: it plans a fixed two-node chain and
//! answers the final prompt by quoting the checked sub-answers.

use std::sync::Arc;

use coa::actions::{ActionSet, DataRecord, DataValue, FixtureSearch, SearchResult, StaticDataSource};
use coa::backends::{BackendError, ChatBackend, ChatParams, MockEmbedder, UsageCounters, UsageMeter};
use coa::chain::{ChatMessage, CHAIN_PROMPT_OPENING};
use coa::{Engine, RunConfig};

#[derive(Default)]
struct RuleModel {
    meter: UsageMeter,
}

impl ChatBackend for RuleModel {
    fn chat_complete(&self, messages: &[ChatMessage], _: &ChatParams) -> Result<String, BackendError> {
        self.meter.record_chat();
        let prompt = &messages.last().unwrap().content;
        if prompt.starts_with(CHAIN_PROMPT_OPENING) {
            return Ok("[Node 1]\nAction: web-querying\nSub: Who founded the Acme Rocket Company\n[Guess Answer] Jane Roe\n\
                       [Node 2]\nAction: data-analyzing\nSub: What is the acme share price\n[Unsolved Sub]\n"
                .into());
        }
        let answers: Vec<&str> = prompt.lines().filter_map(|l| l.trim().strip_prefix("Answer: ")).collect();
        Ok(format!("[Final Content] {}", answers.join("; ")))
    }

    fn usage(&self) -> UsageCounters {
        self.meter.snapshot()
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut search = FixtureSearch::new();
    search.insert(
        "Who founded the Acme Rocket Company",
        vec![SearchResult {
            title: "Who founded the Acme Rocket Company".into(),
            snippet: "Jane Roe".into(),
            url: "https://example.org/acme".into(),
            page_content: Some("The Acme Rocket Company was founded by John Doe in 1999.".into()),
        }],
    );
    let mut quote = DataRecord::new("acme share price", DataValue::Number(41.7));
    quote.as_of = Some("2024-06-01".into());
    let actions = ActionSet::default().with_search(search).with_data(StaticDataSource::new(vec![quote])?);

    let engine = Engine::new(Arc::new(RuleModel::default()), Arc::new(MockEmbedder::new(64)), actions);
    let answer = engine.run_question("Who founded Acme and what does its stock trade at?", &RunConfig::default())?;

    println!("answer: {}\n", answer.text);
    for (node, event) in answer.trace.chain_after.nodes.iter().zip(&answer.trace.per_node_events) {
        println!(
            "node {}: guess {:?} -> {:?} (mrfs {:?}, corrected {}, imputed {})",
            node.index, node.guess_answer, node.resolved_answer, event.mrfs, event.corrected, event.imputed
        );
    }
    println!("\nusage: {:?}", answer.trace.usage);
    Ok(())
}
