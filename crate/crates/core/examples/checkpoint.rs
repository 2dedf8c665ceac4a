//! Trains briefly, saves a checkpoint, reloads it and checks that the
//! reloaded model scores the same and predicts scopes for a new sentence.

use orthoattn::backbone::{BackboneSpec, TokenSequence};
use orthoattn::corpus::{augment_words, synth, Preprocessing};
use orthoattn::experiment::{evaluate, fit, prepare, EpochControl, TrainConfig};
use orthoattn::model::ScopeModel;

fn main() -> anyhow::Result<()> {
    let cfg = TrainConfig { preprocessing: Preprocessing::Augment, ..TrainConfig::default() };
    let samples = synth::bundled();
    let all: Vec<usize> = (0..samples.len()).collect();
    let mut model = ScopeModel::new(cfg.model_spec(&BackboneSpec::toy(), 4)?, 1)?;
    let vocab = *model.backbone.vocab().expect("toy backbone has a vocabulary");
    let data = prepare(&samples, &all, cfg.preprocessing, &vocab, cfg.max_len)?;
    fit(&mut model, &data, &cfg, 1, 40, |_, _, _| Ok(EpochControl::Continue))?;

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("model.ckpt");
    model.save(&path, cfg.preprocessing, cfg.max_len)?;
    let (loaded, meta) = ScopeModel::load(&path)?;
    let before = evaluate(&model, &data)?.metrics();
    let after = evaluate(&loaded, &data)?.metrics();
    println!("saved {} ({} bytes); F1 before {:.4}, after reload {:.4}", path.display(), std::fs::metadata(&path)?.len(), before.f1, after.f1);
    anyhow::ensure!(before == after, "reloaded model scores differently");

    let sample = synth::generate(1, 99).remove(0);
    let aug = augment_words(&sample, meta.preprocessing);
    let seq = TokenSequence::from_words(0, &aug.words, aug.cue_ids.clone(), &vocab)?;
    let labels = loaded.predict(&seq)?.labels();
    let marked: Vec<String> = aug.words.iter().zip(&labels).map(|(w, &l)| if l == 1 { format!("[{w}]") } else { w.clone() }).collect();
    println!("prediction: {}", marked.join(" "));
    Ok(())
}

