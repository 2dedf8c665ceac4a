//! Generates a synthetic negation corpus and prints it as JSONL.
//!
//! `cargo run --example synth -- [n] [seed]`

use orthoattn::corpus::synth;

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n = args.first().map(|a| a.parse()).transpose()?.unwrap_or(8);
    let seed = args.get(1).map(|a| a.parse()).transpose()?.unwrap_or(2020);
    for s in synth::generate(n, seed) {
        println!("{}", serde_json::to_string(&s)?);
    }
    Ok(())
}
