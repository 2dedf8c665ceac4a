//! Finite-difference check of every graph operation and of each layer of
//! one variant, up to the full scope model.
//!
//! `cargo run --release --example gradcheck -- [em|emb|c|ca]`

use orthoattn::gradcheck::{layer_suite, op_suite, suite_table};
use orthoattn::ortho::Variant;

fn main() -> anyhow::Result<()> {
    let variants = match std::env::args().nth(1) {
        Some(v) => vec![v.parse::<Variant>()?],
        None => Variant::ALL.to_vec(),
    };
    let mut rows = op_suite(0)?;
    for v in variants {
        rows.extend(layer_suite(v, 64, 4, 0)?);
    }
    print!("{}", suite_table(&rows));
    anyhow::ensure!(rows.iter().all(|r| r.passed), "gradient check failed");
    Ok(())
}
