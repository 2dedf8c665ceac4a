//! Training, cross-validation and reporting.

mod adam;
mod bench;
mod cv;
mod metrics;
mod report;
mod train;

use serde::{Deserialize, Serialize};

use crate::backbone::BackboneSpec;
use crate::corpus::Preprocessing;
use crate::model::ModelSpec;
use crate::ortho::{OAConfig, Variant};
use crate::{Error, Result};

pub use adam::Adam;
pub use bench::{bench, bench_table, BenchRow};
pub use cv::{run_crossdataset, run_cv, run_fixed_split, Protocol, RunOptions, RunSummary};
pub use metrics::{token_f1, Confusion, Metrics};
pub use report::{parse_markdown_table, report, summary_csv, summary_markdown, Report, ReportRow};
pub use train::{evaluate, fit, prepare, train_epoch, train_fold, EpochControl, FoldReport};

/// Hyperparameters of one training run; defaults are the published ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_backbone: f64,
    pub lr_oa: f64,
    pub batch: usize,
    pub dropout: f64,
    pub max_len: usize,
    pub epochs: usize,
    pub patience: usize,
    pub k: usize,
    pub seed: u64,
    pub variant: Variant,
    pub preprocessing: Preprocessing,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_backbone: 3e-5,
            lr_oa: 1e-4,
            batch: 32,
            dropout: 0.3,
            max_len: 128,
            epochs: 60,
            patience: 6,
            k: 10,
            seed: 0,
            variant: Variant::Em,
            preprocessing: Preprocessing::Normal,
        }
    }
}

impl TrainConfig {
    /// The eight training hyperparameters in a fixed one-line form.
    pub fn hyperparameters(&self) -> String {
        format!(
            "{{lr_backbone: {:e}, lr_oa: {:e}, batch: {}, dropout: {}, max_len: {}, epochs: {}, patience: {}, k: {}}}",
            self.lr_backbone, self.lr_oa, self.batch, self.dropout, self.max_len, self.epochs, self.patience, self.k
        )
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr_backbone >= 0.0 && self.lr_oa > 0.0) {
            return bad(format!("learning rates must be positive (backbone {}, oa {})", self.lr_backbone, self.lr_oa));
        }
        if self.batch == 0 || self.max_len == 0 || self.epochs == 0 {
            return bad("batch, max_len and epochs must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.k < 2 {
            return bad(format!("k must be at least 2, got {}", self.k));
        }
        Ok(())
    }

    /// The model this config trains on top of `backbone`.
    pub fn model_spec(&self, backbone: &BackboneSpec, n_heads: usize) -> Result<ModelSpec> {
        let mut oa = OAConfig::new(backbone.d(), n_heads, self.variant)?;
        oa.dropout = self.dropout;
        let spec = ModelSpec { backbone: backbone.clone(), oa };
        spec.validate()?;
        Ok(spec)
    }
}

/// Derives an independent seed for sub-task `tag` of a run (splitmix64).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(0x632b_e59b_d9b4_e019);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
