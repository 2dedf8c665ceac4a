//! Straight-line reference implementations over plain `Vec<f64>` rows.
//! Nothing here touches the autodiff graph.
#![allow(dead_code)]

use orthoattn::nn::{LayerNorm, Linear};
use orthoattn::ortho::{Alpha, Beta, OAConfig, OAHead};
use orthoattn::tensor::{ParamStore, Tensor};

pub type Rows = Vec<Vec<f64>>;

pub fn rows(t: &Tensor) -> Rows {
    let cols = *t.shape().last().unwrap();
    t.data().chunks(cols).map(<[f64]>::to_vec).collect()
}

pub fn linear(store: &ParamStore, lin: &Linear, x: &[f64]) -> Vec<f64> {
    let w = store.get(lin.weight);
    (0..lin.out_dim)
        .map(|o| {
            let mut acc = lin.bias.map(|b| store.get(b).data()[o]).unwrap_or(0.0);
            for i in 0..lin.in_dim {
                acc += w.data()[o * lin.in_dim + i] * x[i];
            }
            acc
        })
        .collect()
}

pub fn relu(x: Vec<f64>) -> Vec<f64> {
    x.into_iter().map(|v| v.max(0.0)).collect()
}

pub fn relu_linear(store: &ParamStore, lin: &Linear, x: &[f64]) -> Vec<f64> {
    relu(linear(store, lin, x))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `softmax(q . c_i) c` for every query row.
pub fn dot_attention(query: &Rows, context: &Rows) -> Rows {
    query
        .iter()
        .map(|q| {
            let w = softmax(&context.iter().map(|c| dot(q, c)).collect::<Vec<_>>());
            let mut out = vec![0.0; q.len()];
            for (wi, c) in w.iter().zip(context) {
                for k in 0..out.len() {
                    out[k] += wi * c[k];
                }
            }
            out
        })
        .collect()
}

/// Non-overlapping convolution, filter size == stride, flattened filter-major.
pub fn conv(x: &[f64], filters: &[f64], s: usize, bias: f64) -> Vec<f64> {
    let n_filters = filters.len() / s;
    let windows = x.len() / s;
    let mut out = vec![0.0; n_filters * windows];
    for f in 0..n_filters {
        for t in 0..windows {
            let mut acc = bias;
            for k in 0..s {
                acc += filters[f * s + k] * x[t * s + k];
            }
            out[f * windows + t] = acc;
        }
    }
    out
}

pub fn sqrt_dk(cfg: &OAConfig) -> usize {
    cfg.sqrt_dk().unwrap()
}

/// `[m][n][d_k]`
pub fn alpha(store: &ParamStore, a: &Alpha, c: &Rows, q: &Rows, cfg: &OAConfig) -> Vec<Rows> {
    match a {
        Alpha::Multiplicative { context, query, mix } => c
            .iter()
            .map(|ci| {
                let c1 = relu_linear(store, context, ci);
                q.iter()
                    .map(|qj| {
                        let q1 = relu_linear(store, query, qj);
                        let x: Vec<f64> = c1.iter().zip(&q1).map(|(a, b)| a * b).collect();
                        relu_linear(store, mix, &x)
                    })
                    .collect()
            })
            .collect(),
        Alpha::Convolutional { context, filters, filter_bias, mix } => {
            let s = sqrt_dk(cfg);
            c.iter()
                .map(|ci| {
                    let c1 = relu_linear(store, context, ci);
                    q.iter()
                        .map(|qj| {
                            let w = linear(store, filters, qj);
                            let b = linear(store, filter_bias, qj)[0];
                            relu_linear(store, mix, &conv(&c1, &w, s, b))
                        })
                        .collect()
                })
                .collect()
        }
    }
}

/// `[n][d_k]`
pub fn beta(store: &ParamStore, b: &Beta, c: &Rows, q: &Rows, cfg: &OAConfig) -> Rows {
    match b {
        Beta::QueryOnly { query } => q.iter().map(|qj| relu_linear(store, query, qj)).collect(),
        Beta::Multiplicative { context, query, mix } => {
            let c1: Rows = c.iter().map(|x| relu_linear(store, context, x)).collect();
            let q1: Rows = q.iter().map(|x| relu_linear(store, query, x)).collect();
            let summary = dot_attention(&q1, &c1);
            q1.iter()
                .zip(&summary)
                .map(|(a, s)| {
                    let q2: Vec<f64> = a.iter().zip(s).map(|(x, y)| x * y).collect();
                    relu_linear(store, mix, &q2)
                })
                .collect()
        }
        Beta::Convolutional { context, query, filters, filter_bias } => {
            let s = sqrt_dk(cfg);
            let c1: Rows = c.iter().map(|x| relu_linear(store, context, x)).collect();
            let q1: Rows = q.iter().map(|x| relu_linear(store, query, x)).collect();
            let summary = dot_attention(&q1, &c1);
            q1.iter()
                .zip(&summary)
                .map(|(qj, sj)| {
                    let w = linear(store, filters, sj);
                    let b = linear(store, filter_bias, sj)[0];
                    conv(qj, &w, s, b)
                })
                .collect()
        }
    }
}

/// Double loop over (context word, query word); eval mode.
pub fn head(store: &ParamStore, h: &OAHead, c: &Rows, q: &Rows, cfg: &OAConfig) -> Rows {
    let keys = alpha(store, &h.alpha_k, c, q, cfg);
    let values = alpha(store, &h.alpha_v, c, q, cfg);
    let queries = beta(store, &h.beta, c, q, cfg);
    let scale = (cfg.d_k() as f64).sqrt();
    (0..c.len())
        .map(|i| {
            let scores: Vec<f64> = (0..q.len()).map(|j| dot(&keys[i][j], &queries[j]) / scale).collect();
            let w = softmax(&scores);
            let mut out = vec![0.0; cfg.d_k()];
            for j in 0..q.len() {
                for k in 0..out.len() {
                    out[k] += w[j] * values[i][j][k];
                }
            }
            out
        })
        .collect()
}

pub fn layer_norm(store: &ParamStore, ln: &LayerNorm, x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let rstd = 1.0 / (var + 1e-5).sqrt();
    let (g, b) = (store.get(ln.gain).data(), store.get(ln.bias).data());
    x.iter().enumerate().map(|(k, v)| (v - mean) * rstd * g[k] + b[k]).collect()
}

pub fn max_abs_diff(a: &Rows, b: &Rows) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            assert_eq!(x.len(), y.len());
            x.iter().zip(y).map(|(p, q)| (p - q).abs())
        })
        .fold(0.0, f64::max)
}
