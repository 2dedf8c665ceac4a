//! Parameterized building blocks shared by every model component.

use crate::tensor::{Graph, ParamGroup, ParamId, ParamStore, RngState, Tensor, Var};
use crate::Result;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Per-forward-pass state: train/eval mode and the dropout stream.
#[derive(Debug, Clone)]
pub struct Ctx {
    pub training: bool,
    pub rng: RngState,
}

impl Ctx {
    pub fn eval() -> Self {
        Self { training: false, rng: RngState::new(0) }
    }

    pub fn train(rng: RngState) -> Self {
        Self { training: true, rng }
    }

    pub fn dropout(&mut self, g: &mut Graph<'_>, x: Var, p: f64) -> Result<Var> {
        Ok(g.dropout(x, p, &mut self.rng, self.training)?)
    }
}

/// Weight initialization scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Xavier-uniform weights; biases uniform in `±1/sqrt(in_dim)`. A nonzero
    /// bias keeps ReLU pre-activations off the kink when an input row is
    /// exactly zero, which products of ReLU outputs produce routinely.
    Xavier,
    /// Weights drawn from `N(0, std²)`, zero biases (the BERT scheme).
    Normal(f64),
}

/// `y = x W^T + b`, with `W` stored as `[out, in]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Xavier-initialized layer with bias.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        group: ParamGroup,
        rng: &mut RngState,
    ) -> Result<Self> {
        Self::with_init(store, name, in_dim, out_dim, true, Init::Xavier, group, rng)
    }

    pub fn new_no_bias(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        group: ParamGroup,
        rng: &mut RngState,
    ) -> Result<Self> {
        Self::with_init(store, name, in_dim, out_dim, false, Init::Xavier, group, rng)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_init(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        init: Init,
        group: ParamGroup,
        rng: &mut RngState,
    ) -> Result<Self> {
        let w = match init {
            Init::Xavier => Tensor::uniform(vec![out_dim, in_dim], (6.0 / (in_dim + out_dim) as f64).sqrt(), rng)?,
            Init::Normal(std) => Tensor::randn(vec![out_dim, in_dim], std, rng)?,
        };
        let weight = store.add(format!("{name}.weight"), w, group)?;
        let bias = if bias {
            let b = match init {
                Init::Xavier => Tensor::uniform(vec![out_dim], 1.0 / (in_dim as f64).sqrt(), rng)?,
                Init::Normal(_) => Tensor::zeros(vec![out_dim])?,
            };
            Some(store.add(format!("{name}.bias"), b, group)?)
        } else {
            None
        };
        Ok(Self { weight, bias, in_dim, out_dim })
    }

    /// Applies to the last axis of `x`; leading axes are carried through.
    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let wt = g.transpose(w)?;
        let y = g.matmul(x, wt)?;
        match self.bias {
            Some(b) => {
                let b = g.param(b);
                Ok(g.add(y, b)?)
            }
            None => Ok(y),
        }
    }

    pub fn num_params(&self) -> usize {
        self.in_dim * self.out_dim + if self.bias.is_some() { self.out_dim } else { 0 }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub width: usize,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, group: ParamGroup) -> Result<Self> {
        Ok(Self {
            gain: store.add(format!("{name}.gain"), Tensor::ones(vec![width])?, group)?,
            bias: store.add(format!("{name}.bias"), Tensor::zeros(vec![width])?, group)?,
            width,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let (gain, bias) = (g.param(self.gain), g.param(self.bias));
        Ok(g.layer_norm(x, gain, bias, LAYER_NORM_EPS)?)
    }

    pub fn num_params(&self) -> usize {
        2 * self.width
    }
}

/// Position-wise `ReLU(x W1^T + b1) W2^T + b2`.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub hidden: Linear,
    pub out: Linear,
}

impl FeedForward {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        d_ff: usize,
        init: Init,
        group: ParamGroup,
        rng: &mut RngState,
    ) -> Result<Self> {
        Ok(Self {
            hidden: Linear::with_init(store, &format!("{name}.hidden"), d, d_ff, true, init, group, rng)?,
            out: Linear::with_init(store, &format!("{name}.out"), d_ff, d, true, init, group, rng)?,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let h = self.hidden.forward(g, x)?;
        let h = g.relu(h);
        self.out.forward(g, h)
    }

    pub fn num_params(&self) -> usize {
        self.hidden.num_params() + self.out.num_params()
    }
}
