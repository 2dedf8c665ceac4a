use std::fmt::Write as _;
use std::time::Instant;

use serde::Serialize;

use crate::corpus::{preprocess, synth, Preprocessing};
use crate::model::{ModelSpec, ScopeModel};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub variant: String,
    pub batch: usize,
    /// Median wall-clock time of one inference pass over the whole batch.
    pub median_ms: f64,
    pub repeats: usize,
}

/// Times eval-mode forward passes over batches of synthetic sentences,
/// after one warm-up pass, taking the median of `repeats` runs.
pub fn bench(spec: &ModelSpec, batch_sizes: &[usize], repeats: usize, seed: u64) -> Result<Vec<BenchRow>> {
    if repeats == 0 || batch_sizes.contains(&0) {
        return Err(Error::Config("batch sizes and repeats must be positive".into()));
    }
    let model = ScopeModel::new(spec.clone(), seed)?;
    let vocab = *model.backbone.vocab().ok_or_else(|| Error::Config("benchmarking needs a token-id backbone".into()))?;
    let max = *batch_sizes.iter().max().unwrap_or(&1);
    let seqs = synth::generate(max, seed)
        .iter()
        .enumerate()
        .map(|(i, s)| Ok(preprocess(s, i as u32, Preprocessing::Normal, &vocab, crate::backbone::MAX_LEN)?.seq))
        .collect::<Result<Vec<_>>>()?;
    batch_sizes
        .iter()
        .map(|&b| {
            let pass = || -> Result<f64> {
                let t = Instant::now();
                for s in &seqs[..b] {
                    std::hint::black_box(model.predict(s)?);
                }
                Ok(t.elapsed().as_secs_f64() * 1e3)
            };
            pass()?;
            let mut times = (0..repeats).map(|_| pass()).collect::<Result<Vec<_>>>()?;
            times.sort_by(f64::total_cmp);
            Ok(BenchRow { variant: spec.oa.variant.label().to_string(), batch: b, median_ms: times[repeats / 2], repeats })
        })
        .collect()
}

pub fn bench_table(rows: &[BenchRow]) -> String {
    let mut md = String::from("| variant | batch | median ms |\n|---|---|---|\n");
    for r in rows {
        writeln!(md, "| {} | {} | {:.3} |", r.variant, r.batch, r.median_ms).unwrap();
    }
    md
}
