use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{derive_seed, prepare, train_fold, Confusion, FoldReport, Metrics, TrainConfig};
use crate::backbone::{BackboneSpec, HashedVocab};
use crate::corpus::{kfold_split, sherlock_split, Preprocessing, ScopeSample, SHERLOCK_REPEATS};
use crate::model::{ModelSpec, ScopeModel};
use crate::ortho::Variant;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    /// k folds; each test fold paired with an equally large validation set.
    CrossValidation,
    /// The corpus's own train/dev/test split, repeated with different seeds.
    FixedSplit,
    /// Train/validation folds of one corpus, test folds of another.
    CrossDataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub variant: Variant,
    pub preprocessing: Preprocessing,
    pub train_set: String,
    pub test_set: String,
    pub protocol: Protocol,
    pub folds: Vec<FoldReport>,
    /// Mean of the fold F1 scores.
    pub macro_f1: f64,
    /// Metrics of the summed fold confusion counts.
    pub pooled: Metrics,
    pub config: TrainConfig,
    pub model: ModelSpec,
}

impl RunSummary {
    /// `<data>-<variant>-<prep>-s<seed>`; cross-dataset runs name both
    /// sides as `<train>-to-<test>`.
    pub fn run_id(train_set: &str, test_set: &str, config: &TrainConfig) -> String {
        let data = if train_set == test_set { train_set.to_string() } else { format!("{train_set}-to-{test_set}") };
        format!("{data}-{}-{}-s{}", config.variant.as_str(), config.preprocessing, config.seed)
    }
}

/// How a run executes, as opposed to what it computes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOptions {
    /// Folds trained concurrently; results do not depend on it.
    pub jobs: usize,
    /// Where to save the best model of every fold as `fold<i>.ckpt`.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { jobs: 1, checkpoint_dir: None }
    }
}

struct Job {
    fold: usize,
    seed: u64,
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
}

/// Cross-validation over one corpus.
pub fn run_cv(samples: &[ScopeSample], dataset: &str, config: &TrainConfig, model: &ModelSpec, opts: &RunOptions) -> Result<RunSummary> {
    let folds = kfold_split(samples.len(), config.k, config.seed)?;
    let jobs_list = folds
        .into_iter()
        .enumerate()
        .map(|(f, fold)| Job { fold: f, seed: derive_seed(config.seed, f as u64 + 1), train: fold.train, val: fold.val, test: fold.test })
        .collect();
    let reports = run_jobs(samples, samples, jobs_list, config, model, opts)?;
    summarize(dataset, dataset, Protocol::CrossValidation, reports, config, model)
}

/// Repeated runs over the split tags carried by the samples.
pub fn run_fixed_split(samples: &[ScopeSample], dataset: &str, config: &TrainConfig, model: &ModelSpec, opts: &RunOptions) -> Result<RunSummary> {
    let split = sherlock_split(samples)?;
    let jobs_list = (0..SHERLOCK_REPEATS)
        .map(|r| Job {
            fold: r,
            seed: derive_seed(config.seed, r as u64 + 1),
            train: split.train.clone(),
            val: split.val.clone(),
            test: split.test.clone(),
        })
        .collect();
    let reports = run_jobs(samples, samples, jobs_list, config, model, opts)?;
    summarize(dataset, dataset, Protocol::FixedSplit, reports, config, model)
}

/// Fold `i` trains on the train/validation part of fold `i` of `train` and
/// tests on fold `i` of `test`, so every test sample is scored exactly once.
pub fn run_crossdataset(
    train: (&[ScopeSample], &str),
    test: (&[ScopeSample], &str),
    config: &TrainConfig,
    model: &ModelSpec,
    opts: &RunOptions,
) -> Result<RunSummary> {
    if matches!(model.backbone, BackboneSpec::Precomputed { .. }) {
        return Err(Error::Config("cross-dataset runs need a backbone that embeds from token ids".into()));
    }
    let train_folds = kfold_split(train.0.len(), config.k, config.seed)?;
    let test_folds = kfold_split(test.0.len(), config.k, config.seed)?;
    let jobs_list = train_folds
        .into_iter()
        .zip(test_folds)
        .enumerate()
        .map(|(f, (a, b))| Job { fold: f, seed: derive_seed(config.seed, f as u64 + 1), train: a.train, val: a.val, test: b.test })
        .collect();
    let reports = run_jobs(train.0, test.0, jobs_list, config, model, opts)?;
    summarize(train.1, test.1, Protocol::CrossDataset, reports, config, model)
}

fn run_jobs(
    train_samples: &[ScopeSample],
    test_samples: &[ScopeSample],
    jobs: Vec<Job>,
    config: &TrainConfig,
    spec: &ModelSpec,
    opts: &RunOptions,
) -> Result<Vec<FoldReport>> {
    config.validate()?;
    spec.validate()?;
    if spec.oa.variant != config.variant || spec.oa.dropout != config.dropout {
        return Err(Error::Config("model spec does not match the training config".into()));
    }
    let one = |job: &Job| -> Result<FoldReport> {
        let mut model = ScopeModel::new(spec.clone(), derive_seed(job.seed, 0))?;
        let vocab = match model.backbone.vocab() {
            Some(v) => *v,
            None => HashedVocab::new(3)?,
        };
        let prep = |s: &[ScopeSample], idx: &[usize]| prepare(s, idx, config.preprocessing, &vocab, config.max_len);
        let (train, val, test) = (prep(train_samples, &job.train)?, prep(train_samples, &job.val)?, prep(test_samples, &job.test)?);
        let report = train_fold(&mut model, &train, &val, &test, config, job.fold, job.seed)?;
        if let Some(dir) = &opts.checkpoint_dir {
            model.save(&dir.join(format!("fold{}.ckpt", job.fold)), config.preprocessing, config.max_len)?;
        }
        log::info!("fold {}: test F1 {:.4} (best epoch {}, {} epochs)", job.fold, report.f1, report.best_epoch, report.epochs_run);
        Ok(report)
    };
    if opts.jobs <= 1 {
        jobs.iter().map(one).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| jobs.par_iter().map(one).collect())
    }
}

fn summarize(
    train_set: &str,
    test_set: &str,
    protocol: Protocol,
    folds: Vec<FoldReport>,
    config: &TrainConfig,
    model: &ModelSpec,
) -> Result<RunSummary> {
    let macro_f1 = folds.iter().map(|f| f.f1).sum::<f64>() / folds.len() as f64;
    let mut total = Confusion::default();
    folds.iter().for_each(|f| total.add(f.confusion));
    Ok(RunSummary {
        run_id: RunSummary::run_id(train_set, test_set, config),
        variant: config.variant,
        preprocessing: config.preprocessing,
        train_set: train_set.to_string(),
        test_set: test_set.to_string(),
        protocol,
        folds,
        macro_f1,
        pooled: total.metrics(),
        config: config.clone(),
        model: model.clone(),
    })
}
