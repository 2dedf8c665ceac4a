//! Forward/backward timing of the scope model per variant and batch size.
//!
//! `cargo run --release --example bench`

use orthoattn::backbone::BackboneSpec;
use orthoattn::experiment::{bench, bench_table, TrainConfig};
use orthoattn::ortho::Variant;

fn main() -> anyhow::Result<()> {
    let mut rows = Vec::new();
    for variant in Variant::ALL {
        let cfg = TrainConfig { variant, ..TrainConfig::default() };
        rows.extend(bench(&cfg.model_spec(&BackboneSpec::toy(), 4)?, &[1, 8, 32], 3, 0)?);
    }
    print!("{}", bench_table(&rows));
    Ok(())
}
