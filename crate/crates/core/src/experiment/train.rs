use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{derive_seed, Adam, Confusion, Metrics, TrainConfig};
use crate::backbone::HashedVocab;
use crate::corpus::{preprocess, Prepared, Preprocessing, ScopeSample};
use crate::model::ScopeModel;
use crate::nn::Ctx;
use crate::tensor::{GradBuffer, Graph, RngState};
use crate::{Error, Result};

/// Samples per gradient work unit. Fixed so that the summation order, and
/// therefore every bit of the result, does not depend on the thread count.
const CHUNK: usize = 8;

/// Preprocesses `samples[i]` for each `i` in `indices`; the dataset index is
/// the sequence id, which precomputed backbones key on.
pub fn prepare(
    samples: &[ScopeSample],
    indices: &[usize],
    mode: Preprocessing,
    vocab: &HashedVocab,
    max_len: usize,
) -> Result<Vec<Prepared>> {
    indices
        .iter()
        .map(|&i| {
            let id = u32::try_from(i).map_err(|_| Error::Config("dataset too large".into()))?;
            preprocess(&samples[i], id, mode, vocab, max_len)
        })
        .collect()
}

/// Pooled confusion counts of eval-mode predictions; inserted markers are
/// not scored and windowed-out scope words count as missed.
pub fn evaluate(model: &ScopeModel, data: &[Prepared]) -> Result<Confusion> {
    let per: Vec<Confusion> = data
        .par_iter()
        .map(|p| {
            let pred = model.predict(&p.seq)?.labels();
            let mut c = Confusion::count(&pred, &p.labels, &p.scored)?;
            c.fn_ += p.truncated_positives;
            Ok(c)
        })
        .collect::<Result<_>>()?;
    let mut total = Confusion::default();
    per.into_iter().for_each(|c| total.add(c));
    Ok(total)
}

/// One pass over `data` in a seeded shuffled order. Each batch minimizes the
/// mean cross-entropy over all of its tokens. Returns the mean batch loss.
pub fn train_epoch(model: &mut ScopeModel, adam: &mut Adam, data: &[Prepared], batch: usize, seed: u64, epoch: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    let epoch_seed = derive_seed(seed, epoch as u64);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut RngState::new(epoch_seed));
    let mut losses = Vec::new();
    for (b, idx) in order.chunks(batch.max(1)).enumerate() {
        let tokens: usize = idx.iter().map(|&i| data[i].seq.len()).sum();
        let model_ref = &*model;
        let parts: Vec<(GradBuffer, f64)> = idx
            .par_chunks(CHUNK)
            .enumerate()
            .map(|(c, chunk)| {
                let mut grads = GradBuffer::zeros_like(&model_ref.params);
                let mut loss = 0.0;
                for (j, &i) in chunk.iter().enumerate() {
                    let p = &data[i];
                    let stream = ((b * batch + c * CHUNK + j) as u64) + 1;
                    let mut ctx = Ctx::train(RngState::for_stream(epoch_seed, stream));
                    let mut g = Graph::with_params(&model_ref.params);
                    g.set_sparse_param_rows(true);
                    let l = model_ref.loss_graph(&mut g, &p.seq, &p.labels, tokens, &mut ctx)?;
                    loss += g.value(l).data()[0];
                    g.backward(l)?;
                    g.accumulate_param_grads(&mut grads);
                }
                Ok((grads, loss))
            })
            .collect::<Result<_>>()?;
        let mut iter = parts.into_iter();
        let (mut grads, mut loss) = iter.next().expect("non-empty batch");
        for (g, l) in iter {
            grads.merge(&g);
            loss += l;
        }
        adam.step(&mut model.params, &grads)?;
        losses.push(loss);
    }
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpochControl {
    Continue,
    Stop,
}

/// Trains for up to `max_epochs`, calling `on_epoch(epoch, model, loss)`
/// after each (epochs count from 1). Returns the number of epochs run.
pub fn fit(
    model: &mut ScopeModel,
    data: &[Prepared],
    config: &TrainConfig,
    seed: u64,
    max_epochs: usize,
    mut on_epoch: impl FnMut(usize, &ScopeModel, f64) -> Result<EpochControl>,
) -> Result<usize> {
    let mut adam = Adam::new(&model.params, config.lr_backbone, config.lr_oa);
    for epoch in 1..=max_epochs {
        let loss = train_epoch(model, &mut adam, data, config.batch, seed, epoch)?;
        if on_epoch(epoch, model, loss)? == EpochControl::Stop {
            return Ok(epoch);
        }
    }
    Ok(max_epochs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub seed: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: Confusion,
    pub best_epoch: usize,
    pub epochs_run: usize,
    /// Validation F1 after each epoch.
    pub val_f1: Vec<f64>,
    pub train_seconds: f64,
}

/// Trains with early stopping on validation F1 and reports test metrics of
/// the best snapshot.
pub fn train_fold(
    model: &mut ScopeModel,
    train: &[Prepared],
    val: &[Prepared],
    test: &[Prepared],
    config: &TrainConfig,
    fold: usize,
    seed: u64,
) -> Result<FoldReport> {
    for (name, part) in [("train", train), ("validation", val), ("test", test)] {
        if part.is_empty() {
            return Err(Error::Training(format!("fold {fold}: empty {name} split")));
        }
    }
    let start = Instant::now();
    let mut best: Option<(f64, usize, Vec<crate::tensor::Tensor>)> = None;
    let mut history = Vec::new();
    let epochs_run = fit(model, train, config, seed, config.epochs, |epoch, model, _| {
        let f1 = evaluate(model, val)?.metrics().f1;
        history.push(f1);
        log::debug!("fold {fold} epoch {epoch}: val F1 {f1:.4}");
        match &best {
            Some((b, _, _)) if f1 <= *b => {}
            _ => best = Some((f1, epoch, model.params.snapshot())),
        }
        let best_epoch = best.as_ref().map_or(epoch, |b| b.1);
        Ok(if epoch - best_epoch >= config.patience { EpochControl::Stop } else { EpochControl::Continue })
    })?;
    let (_, best_epoch, snapshot) = best.expect("at least one epoch");
    model.params.restore(&snapshot);
    let confusion = evaluate(model, test)?;
    let Metrics { precision, recall, f1 } = confusion.metrics();
    Ok(FoldReport {
        fold,
        seed,
        precision,
        recall,
        f1,
        confusion,
        best_epoch,
        epochs_run,
        val_f1: history,
        train_seconds: start.elapsed().as_secs_f64(),
    })
}
