//! Chunk documents into a vector store, query it, and persist it to disk.

use coa::backends::MockEmbedder;
use coa::vectorstore::{chunk_document, VectorStore};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let embedder = MockEmbedder::new(64);
    let mut store = VectorStore::new();
    let docs = [
        ("handbook.md", "Expense reports are due on the fifth of each month. ".repeat(30)),
        ("faq.md", "The office is closed on public holidays. Badges are issued by security. ".repeat(20)),
    ];
    for (id, text) in &docs {
        let chunks = chunk_document(text, 400, 80)?;
        let n = store.upsert_chunks(id, &chunks, &embedder)?;
        println!("{id}: {n} chunks");
    }

    let query = embedder.embed_one("When are expense reports due?");
    for hit in store.query(&query, 3)? {
        println!("{:.4}  {}#{}", hit.similarity, hit.chunk.doc_id, hit.chunk.chunk_index);
    }

    let path = std::env::temp_dir().join("coa-example-store.jsonl");
    store.save(&path)?;
    let loaded = VectorStore::load(&path)?;
    println!("saved and reloaded {} chunks from {}", loaded.len(), path.display());
    std::fs::remove_file(path)?;
    Ok(())
}
