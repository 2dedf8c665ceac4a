//! Trains one configuration on the bundled 64-sample corpus without a
//! validation split and prints train and held-out F1 per epoch.
//!
//! `cargo run --release --example overfit -- [variant] [normal|augment] [epochs]`

use orthoattn::backbone::BackboneSpec;
use orthoattn::corpus::synth;
use orthoattn::experiment::{evaluate, fit, prepare, EpochControl, TrainConfig};
use orthoattn::model::ScopeModel;

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut cfg = TrainConfig::default();
    if let Some(v) = args.first() {
        cfg.variant = v.parse()?;
    }
    if let Some(p) = args.get(1) {
        cfg.preprocessing = p.parse()?;
    }
    let epochs = args.get(2).map(|e| e.parse()).transpose()?.unwrap_or(200);

    let train_samples = synth::bundled();
    let held_samples = synth::generate(64, 7777);
    let all: Vec<usize> = (0..64).collect();
    let mut model = ScopeModel::new(cfg.model_spec(&BackboneSpec::toy(), 4)?, cfg.seed)?;
    let vocab = *model.backbone.vocab().expect("toy backbone has a vocabulary");
    let train = prepare(&train_samples, &all, cfg.preprocessing, &vocab, cfg.max_len)?;
    let held = prepare(&held_samples, &all, cfg.preprocessing, &vocab, cfg.max_len)?;

    fit(&mut model, &train, &cfg, cfg.seed, epochs, |epoch, m, loss| {
        if epoch % 10 == 0 || epoch == 1 {
            let train_f1 = evaluate(m, &train)?.metrics().f1;
            let held_f1 = evaluate(m, &held)?.metrics().f1;
            println!("epoch {epoch:>3}  loss {loss:.4}  train F1 {train_f1:.4}  held-out F1 {held_f1:.4}");
        }
        Ok(EpochControl::Continue)
    })?;
    Ok(())
}
