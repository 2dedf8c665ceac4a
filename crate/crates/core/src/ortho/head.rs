use crate::nn::Ctx;
use crate::tensor::{Graph, ParamStore, RngState, TensorError, Var};
use crate::{Error, Result};

use super::{Alpha, Beta, OAConfig};

/// One Orthogonal Attention head: independent key and value generators and
/// a query generator.
#[derive(Debug, Clone)]
pub struct OAHead {
    pub alpha_k: Alpha,
    pub alpha_v: Alpha,
    pub beta: Beta,
}

/// Every intermediate of a head evaluation, for inspection and tests.
#[derive(Debug, Clone, Copy)]
pub struct HeadTrace {
    /// `[m, n, d_k]`
    pub keys: Var,
    /// `[m, n, d_v]`
    pub values: Var,
    /// `[n, d_k]`
    pub queries: Var,
    /// Attention weights after dropout, `[m, n, 1]`.
    pub weights: Var,
    /// `[m, d_v]`
    pub output: Var,
}

impl OAHead {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &OAConfig, rng: &mut RngState) -> Result<Self> {
        Ok(Self {
            alpha_k: Alpha::new(store, &format!("{name}.alpha_k"), cfg, rng)?,
            alpha_v: Alpha::new(store, &format!("{name}.alpha_v"), cfg, rng)?,
            beta: Beta::new(store, &format!("{name}.beta"), cfg, rng)?,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, ctx: &mut Ctx, c: Var, q: Var, cfg: &OAConfig) -> Result<Var> {
        Ok(self.forward_traced(g, ctx, c, q, cfg)?.output)
    }

    /// `C^Q_i = sum_j softmax_j(K_ij . Q_j / sqrt(d_k)) V_ij`.
    ///
    /// Scores are formed pairwise by an elementwise product and a reduction
    /// over the feature axis, so no `[m, n, n]` tensor is ever built.
    pub fn forward_traced(&self, g: &mut Graph<'_>, ctx: &mut Ctx, c: Var, q: Var, cfg: &OAConfig) -> Result<HeadTrace> {
        check_inputs(g, c, q, cfg)?;
        let (m, n, dk) = (g.shape(c)[0], g.shape(q)[0], cfg.d_k());
        let keys = self.alpha_k.forward(g, c, q, cfg)?;
        let values = self.alpha_v.forward(g, c, q, cfg)?;
        let queries = self.beta.forward(g, c, q, cfg)?;

        let q3 = g.reshape(queries, &[1, n, dk])?;
        let prod = g.mul(keys, q3)?;
        let scores = g.sum_axis(prod, 2, true)?;
        let scores = g.scale(scores, 1.0 / (dk as f64).sqrt());
        let weights = g.softmax(scores, 1)?;
        let weights = ctx.dropout(g, weights, cfg.dropout)?;
        let weighted = g.mul(weights, values)?;
        let output = g.sum_axis(weighted, 1, false)?;
        debug_assert_eq!(g.shape(output), &[m, dk]);
        Ok(HeadTrace { keys, values, queries, weights, output })
    }

    pub fn num_params(&self) -> usize {
        self.alpha_k.num_params() + self.alpha_v.num_params() + self.beta.num_params()
    }
}

pub(super) fn check_inputs(g: &Graph<'_>, c: Var, q: Var, cfg: &OAConfig) -> Result<()> {
    let (cs, qs) = (g.shape(c), g.shape(q));
    if cs.len() != 2 || qs.len() != 2 || cs[1] != cfg.d || qs[1] != cfg.d {
        return Err(TensorError::ShapeMismatch { op: "orthogonal attention inputs", lhs: cs.to_vec(), rhs: qs.to_vec() }.into());
    }
    // Zero-sized tensors cannot be constructed, so a cueless query never
    // reaches this point; callers check for it before gathering rows.
    if qs[0] == 0 {
        return Err(Error::Cueless);
    }
    Ok(())
}
