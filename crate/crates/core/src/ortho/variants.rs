use crate::attention::dot_product_attention;
use crate::nn::Linear;
use crate::tensor::{ConvPairing, Graph, ParamGroup, ParamStore, RngState, TensorError, Var};
use crate::{Error, Result};

use super::{OAConfig, Variant};

/// Key/value generator: `(C [m, d], Q [n, d]) -> [m, n, d_k]`.
#[derive(Debug, Clone)]
pub enum Alpha {
    /// `ReLU((ReLU(C W0^T + b0) ⊙ ReLU(Q W1^T + b1)) W2^T + b2)`, the
    /// product broadcast over every (context, query) pair.
    Multiplicative { context: Linear, query: Linear, mix: Linear },
    /// Each query word generates `sqrt(d_k)` filters of `sqrt(d_k)` taps and
    /// one bias; they are convolved (stride `sqrt(d_k)`) over every projected
    /// context word and the flattened maps are mixed by a final layer.
    Convolutional { context: Linear, filters: Linear, filter_bias: Linear, mix: Linear },
}

/// Query generator: `(C [m, d], Q [n, d]) -> [n, d_k]`.
#[derive(Debug, Clone)]
pub enum Beta {
    /// `ReLU(Q W3^T + b3)`; ignores the context.
    QueryOnly { query: Linear },
    /// Projected queries multiplied by their dot-product summary of the
    /// projected context, then mixed.
    Multiplicative { context: Linear, query: Linear, mix: Linear },
    /// The context summary of each query word generates filters that are
    /// convolved over that same projected query word.
    Convolutional { context: Linear, query: Linear, filters: Linear, filter_bias: Linear },
}

fn relu_linear(g: &mut Graph<'_>, lin: &Linear, x: Var) -> Result<Var> {
    let y = lin.forward(g, x)?;
    Ok(g.relu(y))
}

fn sqrt_dk(cfg: &OAConfig) -> Result<usize> {
    cfg.sqrt_dk()
        .ok_or_else(|| Error::Config(format!("d_k = {} is not a perfect square", cfg.d_k())))
}

/// Reshapes generated filters `[rows, d_k]` into `[rows, s, s]`.
fn as_filters(g: &mut Graph<'_>, flat: Var, s: usize) -> Result<Var> {
    let rows = g.shape(flat)[0];
    Ok(g.reshape(flat, &[rows, s, s])?)
}

impl Alpha {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &OAConfig, rng: &mut RngState) -> Result<Self> {
        let (d, dk) = (cfg.d, cfg.d_k());
        let grp = ParamGroup::Head;
        Ok(match cfg.variant {
            Variant::Em | Variant::Emb => Alpha::Multiplicative {
                context: Linear::new(store, &format!("{name}.context"), d, dk, grp, rng)?,
                query: Linear::new(store, &format!("{name}.query"), d, dk, grp, rng)?,
                mix: Linear::new(store, &format!("{name}.mix"), dk, dk, grp, rng)?,
            },
            Variant::C | Variant::Ca => {
                sqrt_dk(cfg)?;
                Alpha::Convolutional {
                    context: Linear::new(store, &format!("{name}.context"), d, dk, grp, rng)?,
                    filters: Linear::new(store, &format!("{name}.filters"), d, dk, grp, rng)?,
                    filter_bias: Linear::new(store, &format!("{name}.filter_bias"), d, 1, grp, rng)?,
                    mix: Linear::new(store, &format!("{name}.mix"), dk, dk, grp, rng)?,
                }
            }
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, c: Var, q: Var, cfg: &OAConfig) -> Result<Var> {
        let (m, n, dk) = (g.shape(c)[0], g.shape(q)[0], cfg.d_k());
        let x = match self {
            Alpha::Multiplicative { context, query, .. } => {
                let c1 = relu_linear(g, context, c)?;
                let q1 = relu_linear(g, query, q)?;
                let c1 = g.reshape(c1, &[m, 1, dk])?;
                let q1 = g.reshape(q1, &[1, n, dk])?;
                g.mul(c1, q1)?
            }
            Alpha::Convolutional { context, filters, filter_bias, .. } => {
                let s = sqrt_dk(cfg)?;
                let c1 = relu_linear(g, context, c)?;
                let w = filters.forward(g, q)?;
                let w = as_filters(g, w, s)?;
                let b = filter_bias.forward(g, q)?;
                let x = g.conv1d_dynamic(c1, w, b, s, ConvPairing::AllGroups)?;
                expect_width(g, x, dk)?;
                x
            }
        };
        let mix = match self {
            Alpha::Multiplicative { mix, .. } | Alpha::Convolutional { mix, .. } => mix,
        };
        relu_linear(g, mix, x)
    }

    pub fn num_params(&self) -> usize {
        match self {
            Alpha::Multiplicative { context, query, mix } => context.num_params() + query.num_params() + mix.num_params(),
            Alpha::Convolutional { context, filters, filter_bias, mix } => {
                context.num_params() + filters.num_params() + filter_bias.num_params() + mix.num_params()
            }
        }
    }
}

impl Beta {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &OAConfig, rng: &mut RngState) -> Result<Self> {
        let (d, dk) = (cfg.d, cfg.d_k());
        let grp = ParamGroup::Head;
        Ok(match cfg.variant {
            Variant::Em | Variant::C => Beta::QueryOnly {
                query: Linear::new(store, &format!("{name}.query"), d, dk, grp, rng)?,
            },
            Variant::Emb => Beta::Multiplicative {
                context: Linear::new(store, &format!("{name}.context"), d, dk, grp, rng)?,
                query: Linear::new(store, &format!("{name}.query"), d, dk, grp, rng)?,
                mix: Linear::new(store, &format!("{name}.mix"), dk, dk, grp, rng)?,
            },
            Variant::Ca => {
                sqrt_dk(cfg)?;
                Beta::Convolutional {
                    context: Linear::new(store, &format!("{name}.context"), d, dk, grp, rng)?,
                    query: Linear::new(store, &format!("{name}.query"), d, dk, grp, rng)?,
                    filters: Linear::new(store, &format!("{name}.filters"), dk, dk, grp, rng)?,
                    filter_bias: Linear::new(store, &format!("{name}.filter_bias"), dk, 1, grp, rng)?,
                }
            }
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, c: Var, q: Var, cfg: &OAConfig) -> Result<Var> {
        match self {
            Beta::QueryOnly { query } => relu_linear(g, query, q),
            Beta::Multiplicative { context, query, mix } => {
                let c1 = relu_linear(g, context, c)?;
                let q1 = relu_linear(g, query, q)?;
                let summary = dot_product_attention(g, q1, c1)?;
                let q2 = g.mul(q1, summary)?;
                relu_linear(g, mix, q2)
            }
            Beta::Convolutional { context, query, filters, filter_bias } => {
                let s = sqrt_dk(cfg)?;
                let c1 = relu_linear(g, context, c)?;
                let q1 = relu_linear(g, query, q)?;
                let summary = dot_product_attention(g, q1, c1)?;
                let w = filters.forward(g, summary)?;
                let w = as_filters(g, w, s)?;
                let b = filter_bias.forward(g, summary)?;
                let out = g.conv1d_dynamic(q1, w, b, s, ConvPairing::RowWise)?;
                expect_width(g, out, cfg.d_k())?;
                Ok(out)
            }
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            Beta::QueryOnly { query } => query.num_params(),
            Beta::Multiplicative { context, query, mix } => context.num_params() + query.num_params() + mix.num_params(),
            Beta::Convolutional { context, query, filters, filter_bias } => {
                context.num_params() + query.num_params() + filters.num_params() + filter_bias.num_params()
            }
        }
    }
}

fn expect_width(g: &Graph<'_>, x: Var, dk: usize) -> Result<()> {
    let s = g.shape(x);
    if *s.last().unwrap() != dk {
        return Err(TensorError::ShapeMismatch { op: "conv1d_dynamic output width", lhs: s.to_vec(), rhs: vec![dk] }.into());
    }
    Ok(())
}
