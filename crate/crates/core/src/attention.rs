//! Standard attention mechanisms: plain dot-product attention and unmasked
//! multi-head scaled dot-product self-attention.

use crate::nn::{Init, Linear};
use crate::tensor::{Graph, ParamGroup, ParamStore, RngState, TensorError, Var};
use crate::{Error, Result};

/// One summary of `context` per query row: `softmax(Q C^T) C`.
///
/// No scaling and no output projection. `query` is `[n, k]`, `context` is
/// `[m, k]`, the result is `[n, k]`.
pub fn dot_product_attention(g: &mut Graph<'_>, query: Var, context: Var) -> Result<Var> {
    let (sq, sc) = (g.shape(query), g.shape(context));
    if sq.len() != 2 || sc.len() != 2 || sq[1] != sc[1] {
        return Err(TensorError::ShapeMismatch { op: "dot_product_attention", lhs: sq.to_vec(), rhs: sc.to_vec() }.into());
    }
    let ct = g.transpose(context)?;
    let scores = g.matmul(query, ct)?;
    let weights = g.softmax(scores, 1)?;
    Ok(g.matmul(weights, context)?)
}

#[derive(Debug, Clone)]
pub struct AttentionHead {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
}

/// Multi-head self-attention, each head with its own `d_k x d` projections.
///
/// Keys carry no bias: a key bias shifts every logit of a query row by the
/// same amount, which the softmax cancels, so it would be a parameter with an
/// identically zero gradient.
#[derive(Debug, Clone)]
pub struct SelfAttention {
    pub heads: Vec<AttentionHead>,
    pub out: Linear,
    pub d: usize,
}

impl SelfAttention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        n_heads: usize,
        init: Init,
        group: ParamGroup,
        rng: &mut RngState,
    ) -> Result<Self> {
        if n_heads == 0 || !d.is_multiple_of(n_heads) {
            return Err(Error::Config(format!("model width {d} is not divisible by {n_heads} heads")));
        }
        let d_k = d / n_heads;
        let heads = (0..n_heads)
            .map(|h| {
                let p = format!("{name}.head{h}");
                Ok(AttentionHead {
                    query: Linear::with_init(store, &format!("{p}.query"), d, d_k, true, init, group, rng)?,
                    key: Linear::with_init(store, &format!("{p}.key"), d, d_k, false, init, group, rng)?,
                    value: Linear::with_init(store, &format!("{p}.value"), d, d_k, true, init, group, rng)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let out = Linear::with_init(store, &format!("{name}.out"), d, d, true, init, group, rng)?;
        Ok(Self { heads, out, d })
    }

    pub fn d_k(&self) -> usize {
        self.d / self.heads.len()
    }

    /// `x` is `[m, d]`; returns `[m, d]`.
    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let s = g.shape(x);
        if s.len() != 2 || s[1] != self.d {
            return Err(TensorError::ShapeMismatch { op: "self_attention", lhs: s.to_vec(), rhs: vec![s[0], self.d] }.into());
        }
        let scale = 1.0 / (self.d_k() as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let q = head.query.forward(g, x)?;
            let k = head.key.forward(g, x)?;
            let v = head.value.forward(g, x)?;
            let kt = g.transpose(k)?;
            let logits = g.matmul(q, kt)?;
            let logits = g.scale(logits, scale);
            let w = g.softmax(logits, 1)?;
            outs.push(g.matmul(w, v)?);
        }
        let z = g.concat(&outs, 1)?;
        self.out.forward(g, z)
    }

    pub fn num_params(&self) -> usize {
        self.heads
            .iter()
            .map(|h| h.query.num_params() + h.key.num_params() + h.value.num_params())
            .sum::<usize>()
            + self.out.num_params()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{self, random_projection, GradCheckConfig};
    use crate::tensor::Tensor;

    fn softmax(v: &[f64]) -> Vec<f64> {
        let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|x| x / s).collect()
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    /// out_j = sum_i softmax_i(q_j . c_i) c_i
    fn dot_attention_oracle(q: &Tensor, c: &Tensor) -> Vec<Vec<f64>> {
        let (n, m, k) = (q.shape()[0], c.shape()[0], q.shape()[1]);
        (0..n)
            .map(|j| {
                let w = softmax(&(0..m).map(|i| dot(q.row(j), c.row(i))).collect::<Vec<_>>());
                (0..k).map(|f| (0..m).map(|i| w[i] * c.row(i)[f]).sum()).collect()
            })
            .collect()
    }

    fn linear_oracle(store: &ParamStore, lin: &Linear, x: &[f64]) -> Vec<f64> {
        let w = store.get(lin.weight);
        let b = lin.bias.map(|b| store.get(b).data().to_vec()).unwrap_or(vec![0.0; lin.out_dim]);
        (0..lin.out_dim).map(|o| dot(w.row(o), x) + b[o]).collect()
    }

    fn self_attention_oracle(store: &ParamStore, sa: &SelfAttention, x: &Tensor) -> Vec<Vec<f64>> {
        let m = x.shape()[0];
        let dk = sa.d_k();
        let mut concat = vec![Vec::new(); m];
        for head in &sa.heads {
            let q: Vec<_> = (0..m).map(|i| linear_oracle(store, &head.query, x.row(i))).collect();
            let k: Vec<_> = (0..m).map(|i| linear_oracle(store, &head.key, x.row(i))).collect();
            let v: Vec<_> = (0..m).map(|i| linear_oracle(store, &head.value, x.row(i))).collect();
            for i in 0..m {
                let w = softmax(&(0..m).map(|j| dot(&q[i], &k[j]) / (dk as f64).sqrt()).collect::<Vec<_>>());
                for f in 0..dk {
                    concat[i].push((0..m).map(|j| w[j] * v[j][f]).sum());
                }
            }
        }
        concat.iter().map(|z| linear_oracle(store, &sa.out, z)).collect()
    }

    #[test]
    fn dot_attention_single_context_and_identical_rows() {
        let mut rng = RngState::new(2);
        let q = Tensor::randn(vec![3, 4], 1.0, &mut rng).unwrap();
        let c = Tensor::randn(vec![1, 4], 1.0, &mut rng).unwrap();
        let mut g = Graph::new();
        let (qv, cv) = (g.constant(q.clone()), g.constant(c.clone()));
        let out = dot_product_attention(&mut g, qv, cv).unwrap();
        for j in 0..3 {
            assert_eq!(g.value(out).row(j), c.row(0));
        }

        let row = c.row(0).to_vec();
        let same = Tensor::from_rows(&[row.clone(), row.clone(), row.clone()]).unwrap();
        let sv = g.constant(same);
        let out = dot_product_attention(&mut g, qv, sv).unwrap();
        for j in 0..3 {
            let got = g.value(out).row(j);
            assert!(got.iter().zip(&row).all(|(a, b)| (a - b).abs() < 1e-12));
        }
    }

    #[test]
    fn dot_attention_matches_loop_oracle() {
        let mut rng = RngState::new(5);
        let q = Tensor::randn(vec![3, 5], 1.0, &mut rng).unwrap();
        let c = Tensor::randn(vec![4, 5], 1.0, &mut rng).unwrap();
        let mut g = Graph::new();
        let (qv, cv) = (g.constant(q.clone()), g.constant(c.clone()));
        let out = dot_product_attention(&mut g, qv, cv).unwrap();
        let want = dot_attention_oracle(&q, &c);
        for j in 0..3 {
            for f in 0..5 {
                assert!((g.value(out).row(j)[f] - want[j][f]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn dot_attention_rejects_mismatched_width() {
        let mut g = Graph::new();
        let q = g.constant(Tensor::zeros(vec![2, 3]).unwrap());
        let c = g.constant(Tensor::zeros(vec![2, 4]).unwrap());
        assert!(dot_product_attention(&mut g, q, c).is_err());
    }

    fn fixture(m: usize, d: usize, heads: usize, seed: u64) -> (ParamStore, SelfAttention, Tensor) {
        let mut rng = RngState::new(seed);
        let mut store = ParamStore::new();
        let sa = SelfAttention::new(&mut store, "sa", d, heads, Init::Xavier, ParamGroup::Head, &mut rng).unwrap();
        let x = Tensor::randn(vec![m, d], 1.0, &mut rng).unwrap();
        (store, sa, x)
    }

    #[test]
    fn self_attention_matches_per_head_loop() {
        let (store, sa, x) = fixture(3, 4, 2, 11);
        let mut g = Graph::with_params(&store);
        let xv = g.constant(x.clone());
        let z = sa.forward(&mut g, xv).unwrap();
        let want = self_attention_oracle(&store, &sa, &x);
        for i in 0..3 {
            for f in 0..4 {
                assert!((g.value(z).row(i)[f] - want[i][f]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn self_attention_single_position_routes_values() {
        let (store, sa, x) = fixture(1, 8, 2, 12);
        let mut g = Graph::with_params(&store);
        let xv = g.constant(x.clone());
        let z = sa.forward(&mut g, xv).unwrap();
        // attention weight is exactly 1, so Z = W^O concat(W_V x + b_V) + b_O
        let values: Vec<f64> = sa.heads.iter().flat_map(|h| linear_oracle(&store, &h.value, x.row(0))).collect();
        let want = linear_oracle(&store, &sa.out, &values);
        assert!(g.value(z).data().iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn self_attention_is_permutation_equivariant() {
        let (store, sa, x) = fixture(5, 8, 4, 13);
        let perm = [3, 0, 4, 1, 2];
        let px = Tensor::from_rows(&perm.iter().map(|&i| x.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
        let mut g = Graph::with_params(&store);
        let (xv, pv) = (g.constant(x), g.constant(px));
        let z = sa.forward(&mut g, xv).unwrap();
        let pz = sa.forward(&mut g, pv).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            let (a, b) = (g.value(pz).row(k), g.value(z).row(i));
            assert!(a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-9));
        }
    }

    #[test]
    fn self_attention_rejects_indivisible_width() {
        let mut store = ParamStore::new();
        let mut rng = RngState::new(0);
        assert!(SelfAttention::new(&mut store, "sa", 10, 4, Init::Xavier, ParamGroup::Head, &mut rng).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (mut store, sa, x) = fixture(4, 8, 2, 14);
        let xid = store.add("x", x, ParamGroup::Head).unwrap();
        let mut rng = RngState::new(1);
        let report = gradcheck::check(&mut store, GradCheckConfig::default(), &mut rng, |g| {
            let xv = g.param(xid);
            let z = sa.forward(g, xv)?;
            random_projection(g, z, &mut RngState::new(3))
        })
        .unwrap();
        assert!(report.passed(), "{}", report.max_rel_err());

        let mut store = ParamStore::new();
        let q = store.add("q", Tensor::randn(vec![3, 4], 1.0, &mut rng).unwrap(), ParamGroup::Head).unwrap();
        let c = store.add("c", Tensor::randn(vec![5, 4], 1.0, &mut rng).unwrap(), ParamGroup::Head).unwrap();
        let report = gradcheck::check(&mut store, GradCheckConfig::default(), &mut rng, |g| {
            let (qv, cv) = (g.param(q), g.param(c));
            let out = dot_product_attention(g, qv, cv)?;
            random_projection(g, out, &mut RngState::new(3))
        })
        .unwrap();
        assert!(report.passed(), "{}", report.max_rel_err());
    }
}
