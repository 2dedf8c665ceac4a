//! Ten-fold cross-validation with early stopping on the bundled corpus,
//! printing the per-fold table and the CSV summary.
//!
//! `cargo run --release --example cross_validation -- [variant] [prep] [epochs]`

use orthoattn::backbone::BackboneSpec;
use orthoattn::corpus::synth;
use orthoattn::experiment::{run_cv, summary_csv, summary_markdown, RunOptions, TrainConfig};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut cfg = TrainConfig { epochs: 10, ..TrainConfig::default() };
    if let Some(v) = args.first() {
        cfg.variant = v.parse()?;
    }
    if let Some(p) = args.get(1) {
        cfg.preprocessing = p.parse()?;
    }
    if let Some(e) = args.get(2) {
        cfg.epochs = e.parse()?;
    }
    let spec = cfg.model_spec(&BackboneSpec::toy(), 4)?;
    let summary = run_cv(&synth::bundled(), "synthetic", &cfg, &spec, &RunOptions::default())?;
    println!("{}", summary_markdown(&summary));
    print!("{}", summary_csv(&summary)?);
    Ok(())
}
