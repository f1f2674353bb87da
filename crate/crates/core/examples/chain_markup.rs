//! Build the chain-generation prompt, parse a model reply, and serialize it back.

use coa::chain::{build_chain_prompt, default_catalog, parse_chain, serialize_chain};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let question = "Which blockchain launched in 2015 popularized smart contracts, and what is its token?";
    let prompt = build_chain_prompt(question, &default_catalog())?;
    println!("--- prompt ({} messages) ---\n{}\n", prompt.role_messages.len(), prompt.text);

    let reply = "Here is my plan.\n\
[Node 1]\nAction: web-querying\nSub: Which blockchain launched in 2015 popularized smart contracts\n[Guess Answer] Ethereum\n\
[Node 2]\nAction: knowledge-encoding\nSub: What is the native token of Ethereum\n[Unsolved Sub]\n";
    let chain = parse_chain(reply, question)?;
    for node in &chain.nodes {
        println!(
            "node {} [{}] {:?} -> {}",
            node.index,
            node.action.markup_name(),
            node.sub_question,
            node.guess_answer.as_deref().unwrap_or("(missing)")
        );
    }
    println!("\n--- canonical markup ---\n{}", serialize_chain(&chain));
    Ok(())
}
