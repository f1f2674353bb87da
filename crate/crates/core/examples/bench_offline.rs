//! Evaluate a tiny dataset with cover-EM and measure the verification mislead rate.
//!
//! The chat backend is a scripted mock: replies are keyed by the hash of the
//! exact prompt. Final prompts are recorded in a first pass and scripted in a
//! second, the same way regression fixtures are built.

use std::sync::Arc;

use coa::actions::{ActionSet, FixtureSearch, SearchResult};
use coa::backends::{MockChat, MockEmbedder};
use coa::bench::{cover_em, evaluate, mislead_rate, QARecord};
use coa::chain::{build_chain_prompt, default_catalog, Role};
use coa::{Engine, RunConfig};

const ROWS: [(&str, &str, &str, &str); 3] = [
    ("What is the capital of Australia?", "Canberra", "Canberra is the capital city of Australia.", "Canberra"),
    ("Which planet is known as the red planet?", "Mars", "Mars is often called the red planet.", "Mars"),
    ("Who wrote the novel Frankenstein?", "Percy Shelley", "Frankenstein was written by Mary Shelley.", "Mary Shelley"),
];

fn actions() -> ActionSet {
    let mut search = FixtureSearch::new();
    for (i, (q, guess, page, _)) in ROWS.iter().enumerate() {
        search.insert(
            *q,
            vec![SearchResult {
                title: q.to_string(),
                snippet: guess.to_string(),
                url: format!("https://example.org/{i}"),
                page_content: Some(page.to_string()),
            }],
        );
    }
    ActionSet::default().with_search(search)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let records: Vec<QARecord> = ROWS
        .iter()
        .enumerate()
        .map(|(i, (q, _, _, gold))| QARecord { id: format!("r{i}"), question: q.to_string(), gold_answers: vec![gold.to_string()] })
        .collect();

    let mut chat = MockChat::new();
    for (q, guess, ..) in ROWS {
        let prompt = build_chain_prompt(q, &default_catalog())?;
        chat.insert_prompt(&prompt, format!("[Node 1]\nAction: web-querying\nSub: {q}\n[Guess Answer] {guess}\n"));
    }

    // Pass 1: record the final prompts the pipeline produces.
    let recorder = Arc::new(MockChat::from_script(chat.script().clone()));
    let engine = Engine::new(recorder.clone(), Arc::new(MockEmbedder::new(64)), actions());
    let cfg = RunConfig::default();
    for r in &records {
        engine.run_question(&r.question, &cfg)?;
    }
    // Pass 2: answer each final prompt with its last checked sub-answer.
    for prompt in recorder.history().iter().filter(|m| m.last().unwrap().content.starts_with("Question:")) {
        let text = &prompt.iter().rev().find(|m| m.role == Role::User).unwrap().content;
        let answer = text.lines().filter_map(|l| l.trim().strip_prefix("Answer: ")).next_back().unwrap();
        chat.insert(prompt, format!("[Final Content] {answer}"));
    }

    let engine = Engine::new(Arc::new(chat), Arc::new(MockEmbedder::new(64)), actions());
    let report = evaluate(&engine, &records, &cfg, 2)?;
    print!("{}", report.metrics.to_table());
    for r in &report.results {
        println!("{}: {:?} correct={}", r.id, r.final_answer.as_deref().unwrap_or("-"), r.correct);
    }
    println!("cover_em(\"It is Canberra.\", [\"canberra\"]) = {}", cover_em("It is Canberra.", &["canberra"]));

    let mislead = mislead_rate(&engine, &records, &cfg, 2)?;
    println!("mislead rate {:.2} (flipped {:?})", mislead.mislead_rate, mislead.flipped_ids);
    Ok(())
}
