//! Score a guessed answer against retrieved references and decide whether to replace it.

use coa::scoring::{Scorer, Weights};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scorer = Scorer::default();
    let s = scorer.faith_score("the cat sat", "the cat")?;
    println!("P = {:.4}  Rcl = {:.4}  AWL = {:.4}  S = {:.4}", s.p, s.rcl, s.awl_norm, s.s);

    let references = ["the cat", "a dog"];
    let (mrfs, best) = scorer.mrfs("the cat sat", &references)?;
    println!("MRFS = {mrfs:.6} (best reference #{best})");

    for guess in ["Ethereum launched in 2015", "Bitcoin"] {
        let refs = ["Ethereum is a blockchain launched in 2015 by Vitalik Buterin and others."];
        let out = scorer.verify_answer(guess, &refs, 0.5)?;
        println!("{guess:?}: mrfs {:.3}, corrected = {}, answer = {:?}", out.mrfs, out.corrected, out.replacement.as_deref().unwrap_or(guess));
    }

    let recall_heavy = Scorer::with_weights(Weights::new(0.2, 0.7, 0.1)?);
    println!("recall-heavy S = {:.4}", recall_heavy.faith_score("the cat sat", "the cat")?.s);
    Ok(())
}
