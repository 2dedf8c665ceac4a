use crate::attention::SelfAttention;
use crate::nn::{Ctx, FeedForward, Init, LayerNorm, Linear};
use crate::tensor::{Graph, ParamGroup, ParamStore, RngState, Var};
use crate::Result;

use super::{HeadTrace, OAConfig, OAHead};

/// `n_heads` Orthogonal Attention heads, concatenated and projected back to
/// width `d` by `W^D` (no bias).
#[derive(Debug, Clone)]
pub struct OAMultihead {
    pub heads: Vec<OAHead>,
    pub proj: Linear,
}

impl OAMultihead {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &OAConfig, rng: &mut RngState) -> Result<Self> {
        cfg.validate()?;
        let heads = (0..cfg.n_heads)
            .map(|h| OAHead::new(store, &format!("{name}.head{h}"), cfg, rng))
            .collect::<Result<Vec<_>>>()?;
        let proj = Linear::new_no_bias(store, &format!("{name}.proj"), cfg.d, cfg.d, ParamGroup::Head, rng)?;
        Ok(Self { heads, proj })
    }

    pub fn forward(&self, g: &mut Graph<'_>, ctx: &mut Ctx, c: Var, q: Var, cfg: &OAConfig) -> Result<Var> {
        Ok(self.forward_traced(g, ctx, c, q, cfg)?.1)
    }

    pub fn forward_traced(
        &self,
        g: &mut Graph<'_>,
        ctx: &mut Ctx,
        c: Var,
        q: Var,
        cfg: &OAConfig,
    ) -> Result<(Vec<HeadTrace>, Var)> {
        let traces = self
            .heads
            .iter()
            .map(|h| h.forward_traced(g, ctx, c, q, cfg))
            .collect::<Result<Vec<_>>>()?;
        let outs: Vec<Var> = traces.iter().map(|t| t.output).collect();
        let cat = if outs.len() == 1 { outs[0] } else { g.concat(&outs, 1)? };
        let out = self.proj.forward(g, cat)?;
        Ok((traces, out))
    }

    pub fn num_params(&self) -> usize {
        self.heads.iter().map(OAHead::num_params).sum::<usize>() + self.proj.num_params()
    }
}

/// Intermediates of one encoder block evaluation.
#[derive(Debug, Clone)]
pub struct BlockTrace {
    pub heads: Vec<HeadTrace>,
    /// Multihead output `Z`.
    pub attended: Var,
    /// `LN(Z + C)`
    pub normed: Var,
    pub self_attended: Var,
    pub feed_forward: Var,
    pub output: Var,
}

/// Orthogonal attention followed by self-attention and a feed-forward pair,
/// with post-layer-norm residuals:
///
/// ```text
/// X2 = LN(OA(C, Q) + C)
/// C' = LN(FF(SelfAtt(X2)) + X2)
/// ```
#[derive(Debug, Clone)]
pub struct OAEncoderBlock {
    pub config: OAConfig,
    pub attention: OAMultihead,
    pub norm1: LayerNorm,
    pub self_attention: SelfAttention,
    pub ff: FeedForward,
    pub norm2: LayerNorm,
}

impl OAEncoderBlock {
    pub fn new(store: &mut ParamStore, name: &str, config: OAConfig, rng: &mut RngState) -> Result<Self> {
        let grp = ParamGroup::Head;
        Ok(Self {
            attention: OAMultihead::new(store, &format!("{name}.oa"), &config, rng)?,
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), config.d, grp)?,
            self_attention: SelfAttention::new(store, &format!("{name}.self_attn"), config.d, config.n_heads, Init::Xavier, grp, rng)?,
            ff: FeedForward::new(store, &format!("{name}.ff"), config.d, config.d_ff, Init::Xavier, grp, rng)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), config.d, grp)?,
            config,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, ctx: &mut Ctx, c: Var, q: Var) -> Result<Var> {
        Ok(self.forward_traced(g, ctx, c, q)?.output)
    }

    pub fn forward_traced(&self, g: &mut Graph<'_>, ctx: &mut Ctx, c: Var, q: Var) -> Result<BlockTrace> {
        let (heads, attended) = self.attention.forward_traced(g, ctx, c, q, &self.config)?;
        let x1 = g.add(attended, c)?;
        let normed = self.norm1.forward(g, x1)?;
        let self_attended = self.self_attention.forward(g, normed)?;
        let feed_forward = self.ff.forward(g, self_attended)?;
        let x5 = g.add(feed_forward, normed)?;
        let output = self.norm2.forward(g, x5)?;
        Ok(BlockTrace { heads, attended, normed, self_attended, feed_forward, output })
    }

    pub fn num_params(&self) -> usize {
        self.attention.num_params()
            + self.norm1.num_params()
            + self.self_attention.num_params()
            + self.ff.num_params()
            + self.norm2.num_params()
    }
}
