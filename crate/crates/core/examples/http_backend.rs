//! Talk to an OpenAI-compatible API. Needs `COA_API_KEY`; `COA_API_BASE`
//! overrides the endpoint (e.g. a local server). Without a key it only
//! prints the settings it would use.

use coa::backends::{ChatBackend, ChatParams, Embedder, HttpBackend, HttpSettings};
use coa::chain::ChatMessage;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let settings = HttpSettings::default().with_env_overrides();
    println!("endpoint base {}, chat model {}, embedding model {}", settings.base_url, settings.chat_model, settings.embedding_model);
    if settings.api_key.is_none() {
        println!("COA_API_KEY is not set; skipping live calls");
        return Ok(());
    }
    let backend = HttpBackend::new(settings)?;
    let reply = backend.chat_complete(
        &[ChatMessage::system("Answer briefly."), ChatMessage::user("What is the capital of France?")],
        &ChatParams::default(),
    )?;
    println!("chat: {reply}");
    let vectors = backend.embed_batch(&["hello world".to_string()])?;
    println!("embedding dim {}", vectors[0].dim());
    Ok(())
}
