//! Web-querying action over canned search results: snippet filter, page fetch, re-rank.

use coa::actions::{build_query_section, title_snippet_text, web_query_action, FixtureSearch, SearchResult, WebQueryConfig};
use coa::backends::MockEmbedder;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sub = "Which blockchain launched in 2015";
    let guess = "Ethereum";
    let results = vec![
        SearchResult {
            title: sub.into(),
            snippet: guess.into(),
            url: "https://example.org/ethereum".into(),
            page_content: Some("Ethereum went live on 30 July 2015.".into()),
        },
        SearchResult {
            title: "Celebrity gossip".into(),
            snippet: "Unrelated".into(),
            url: "https://example.org/gossip".into(),
            page_content: Some("Nothing to see here.".into()),
        },
    ];
    let mut search = FixtureSearch::new();
    search.insert(sub, results.clone());

    let embedder = MockEmbedder::new(64);
    let mut qs = build_query_section(sub, Some(guess))?;
    println!("query section: {:?}", qs.text);
    for r in &results {
        let cos = coa::vectorstore::cosine_similarity(&embedder.embed_one(&qs.text), &embedder.embed_one(&title_snippet_text(r)))?;
        println!("snippet cosine {cos:+.3}  {}", r.url);
    }

    let items = web_query_action(&mut qs, false, &search, &embedder, &WebQueryConfig::default())?;
    for item in &items {
        println!("#{} {:.3} {:?}", item.rank, item.similarity, item.content);
    }
    Ok(())
}
