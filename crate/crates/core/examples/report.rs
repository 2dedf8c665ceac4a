//! Cross-validates two variants for a few epochs and compares them in one
//! report, the way `oa report` does for finished run directories.

use orthoattn::backbone::BackboneSpec;
use orthoattn::corpus::synth;
use orthoattn::experiment::{report, run_cv, RunOptions, TrainConfig};
use orthoattn::ortho::Variant;

fn main() -> anyhow::Result<()> {
    let samples = synth::bundled();
    let mut summaries = Vec::new();
    for variant in [Variant::Em, Variant::Ca] {
        let cfg = TrainConfig { variant, epochs: 3, k: 4, ..TrainConfig::default() };
        let spec = cfg.model_spec(&BackboneSpec::toy(), 4)?;
        summaries.push(run_cv(&samples, "synthetic", &cfg, &spec, &RunOptions::default())?);
    }
    let r = report(&summaries, false);
    println!("{}", r.markdown());
    print!("{}", r.csv()?);
    Ok(())
}
