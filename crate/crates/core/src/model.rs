//! The scope-resolution model: backbone embeddings, two Orthogonal Attention
//! encoder blocks queried by the cue rows, a residual connection back to the
//! embeddings and a two-class token classifier.
//!
//! ```text
//! X1 = Backbone(tokens)
//! X2 = Dropout(X1)
//! X3 = OA(X2, X2[cue_ids])
//! X4 = OA(X3, X3[cue_ids])
//! X5 = Dropout(X4)
//! X6 = X5 + X1
//! X7 = Dropout(X6)
//! Y  = X7 W^T + b          (softmax over {out of scope, in scope})
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, BackboneSpec, TokenSequence};
use crate::checkpoint::Checkpoint;
use crate::corpus::Preprocessing;
use crate::nn::{Ctx, Linear};
use crate::ortho::{OAConfig, OAEncoderBlock};
use crate::tensor::{Graph, ParamGroup, ParamStore, RngState, Tensor, Var};
use crate::{Error, Result};

/// Everything needed to rebuild a model's structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub backbone: BackboneSpec,
    pub oa: OAConfig,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        self.oa.validate()?;
        if self.backbone.d() != self.oa.d {
            return Err(Error::Config(format!(
                "backbone width {} differs from attention width {}",
                self.backbone.d(),
                self.oa.d
            )));
        }
        Ok(())
    }
}

/// Per-token class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// `[m, 2]`; column 1 is "in scope".
    pub probs: Tensor,
}

impl Prediction {
    pub fn len(&self) -> usize {
        self.probs.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Argmax per token, ties going to "out of scope".
    pub fn labels(&self) -> Vec<u8> {
        self.probs.data().chunks(2).map(|p| u8::from(p[1] > p[0])).collect()
    }
}

/// Graph nodes of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardTrace {
    pub embeddings: Var,
    pub first_block: Var,
    pub second_block: Var,
    pub residual: Var,
    pub logits: Var,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BlockCounts {
    pub orthogonal_attention: usize,
    pub output_projection: usize,
    pub self_attention: usize,
    pub feed_forward: usize,
    pub layer_norms: usize,
    pub total: usize,
}

impl BlockCounts {
    pub fn of(block: &OAEncoderBlock) -> Self {
        let orthogonal_attention = block.attention.heads.iter().map(|h| h.num_params()).sum();
        let c = Self {
            orthogonal_attention,
            output_projection: block.attention.proj.num_params(),
            self_attention: block.self_attention.num_params(),
            feed_forward: block.ff.num_params(),
            layer_norms: block.norm1.num_params() + block.norm2.num_params(),
            total: block.num_params(),
        };
        debug_assert_eq!(
            c.total,
            c.orthogonal_attention + c.output_projection + c.self_attention + c.feed_forward + c.layer_norms
        );
        c
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParamCounts {
    pub backbone: usize,
    pub blocks: Vec<BlockCounts>,
    pub classifier: usize,
    pub total: usize,
}

#[derive(Debug, Clone)]
pub struct ScopeModel {
    pub spec: ModelSpec,
    pub params: ParamStore,
    pub backbone: Backbone,
    pub blocks: [OAEncoderBlock; 2],
    pub classifier: Linear,
}

impl ScopeModel {
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = RngState::new(seed);
        let mut params = ParamStore::new();
        let backbone = Backbone::build(&spec.backbone, &mut params, &mut rng)?;
        Self::assemble(spec, params, backbone, &mut rng)
    }

    /// A model over already-loaded frozen embeddings.
    pub fn with_backbone(spec: ModelSpec, backbone: Backbone, seed: u64) -> Result<Self> {
        spec.validate()?;
        if backbone.d() != spec.oa.d {
            return Err(Error::Config(format!("backbone width {} differs from attention width {}", backbone.d(), spec.oa.d)));
        }
        Self::assemble(spec, ParamStore::new(), backbone, &mut RngState::new(seed))
    }

    fn assemble(spec: ModelSpec, mut params: ParamStore, backbone: Backbone, rng: &mut RngState) -> Result<Self> {
        let blocks = [
            OAEncoderBlock::new(&mut params, "oa_block0", spec.oa, rng)?,
            OAEncoderBlock::new(&mut params, "oa_block1", spec.oa, rng)?,
        ];
        let classifier = Linear::new(&mut params, "classifier", spec.oa.d, 2, ParamGroup::Head, rng)?;
        Ok(Self { spec, params, backbone, blocks, classifier })
    }

    pub fn dropout(&self) -> f64 {
        self.spec.oa.dropout
    }

    /// Builds the forward pass on `g`, which must read from `self.params`.
    pub fn forward_graph(&self, g: &mut Graph<'_>, seq: &TokenSequence, ctx: &mut Ctx) -> Result<ForwardTrace> {
        if seq.cue_ids.is_empty() {
            return Err(Error::Cueless);
        }
        let p = self.dropout();
        let x1 = self.backbone.embed(g, seq, ctx)?;
        let x2 = ctx.dropout(g, x1, p)?;
        let q2 = g.gather_rows(x2, &seq.cue_ids)?;
        let x3 = self.blocks[0].forward(g, ctx, x2, q2)?;
        let q3 = g.gather_rows(x3, &seq.cue_ids)?;
        let x4 = self.blocks[1].forward(g, ctx, x3, q3)?;
        let x5 = ctx.dropout(g, x4, p)?;
        let x6 = g.add(x5, x1)?;
        let x7 = ctx.dropout(g, x6, p)?;
        let logits = self.classifier.forward(g, x7)?;
        Ok(ForwardTrace { embeddings: x1, first_block: x3, second_block: x4, residual: x6, logits })
    }

    /// Eval-mode probabilities.
    pub fn predict(&self, seq: &TokenSequence) -> Result<Prediction> {
        let mut g = Graph::with_params(&self.params);
        let trace = self.forward_graph(&mut g, seq, &mut Ctx::eval())?;
        let probs = g.softmax(trace.logits, 1)?;
        Ok(Prediction { probs: g.value(probs).clone() })
    }

    /// Token cross-entropy summed over the sequence and divided by
    /// `normalizer`, the token count of the whole batch, so that per-sample
    /// losses add up to the batch mean.
    pub fn loss_graph(
        &self,
        g: &mut Graph<'_>,
        seq: &TokenSequence,
        labels: &[u8],
        normalizer: usize,
        ctx: &mut Ctx,
    ) -> Result<Var> {
        let targets = check_labels(labels, seq.len())?;
        if normalizer < seq.len() {
            return Err(Error::Training(format!("normalizer {normalizer} below sequence length {}", seq.len())));
        }
        let weights = vec![1.0 / normalizer as f64; seq.len()];
        let trace = self.forward_graph(g, seq, ctx)?;
        Ok(g.cross_entropy(trace.logits, &targets, &weights)?)
    }

    pub fn count_parameters(&self) -> ParamCounts {
        let backbone = self.backbone.num_params();
        let blocks: Vec<BlockCounts> = self.blocks.iter().map(BlockCounts::of).collect();
        let classifier = self.classifier.num_params();
        let total = backbone + blocks.iter().map(|b| b.total).sum::<usize>() + classifier;
        debug_assert_eq!(total, self.params.num_scalars());
        ParamCounts { backbone, blocks, classifier, total }
    }

    /// Checkpoint of every parameter; `meta` records how inputs were prepared.
    pub fn to_checkpoint(&self, preprocessing: Preprocessing, max_len: usize) -> Result<Checkpoint> {
        let meta = CheckpointMeta { model: self.spec.clone(), preprocessing, max_len };
        Ok(Checkpoint::from_store(&self.params, serde_json::to_value(&meta)?))
    }

    pub fn save(&self, path: &Path, preprocessing: Preprocessing, max_len: usize) -> Result<()> {
        self.to_checkpoint(preprocessing, max_len)?.save(path)
    }

    /// Rebuilds the model described by the checkpoint metadata and loads its
    /// tensors. A precomputed backbone is reloaded from its recorded path.
    pub fn load(path: &Path) -> Result<(Self, CheckpointMeta)> {
        let ckpt = Checkpoint::load(path)?;
        let meta: CheckpointMeta = serde_json::from_value(ckpt.meta.clone())?;
        let mut model = Self::new(meta.model.clone(), 0)?;
        ckpt.apply(&mut model.params)?;
        Ok((model, meta))
    }
}

/// Metadata stored with a saved model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub model: ModelSpec,
    pub preprocessing: Preprocessing,
    pub max_len: usize,
}

/// Mean cross-entropy of `pred` against binary `labels`.
pub fn loss(pred: &Prediction, labels: &[u8]) -> Result<f64> {
    let targets = check_labels(labels, pred.len())?;
    let total: f64 = pred.probs.data().chunks(2).zip(&targets).map(|(p, &t)| -p[t].max(f64::MIN_POSITIVE).ln()).sum();
    Ok(total / labels.len() as f64)
}

fn check_labels(labels: &[u8], m: usize) -> Result<Vec<usize>> {
    if labels.len() != m {
        return Err(Error::Config(format!("{} labels for {m} tokens", labels.len())));
    }
    labels
        .iter()
        .map(|&l| match l {
            0 | 1 => Ok(usize::from(l)),
            other => Err(Error::Config(format!("label {other} is not 0 or 1"))),
        })
        .collect()
}
