use std::collections::HashMap;

use rand::Rng;

use super::params::{GradBuffer, ParamId, ParamStore};
use super::{broadcast_index_maps, broadcast_shape, Result, RngState, Tensor, TensorError};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How a dynamic convolution pairs input rows with filter groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvPairing {
    /// Every input row is convolved with every group: `[rows, groups, width]`.
    AllGroups,
    /// Row `r` is convolved with group `r` only: `[rows, width]`.
    RowWise,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul { a: Var, b: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, factor: f64 },
    Relu { x: Var },
    Softmax { x: Var, axis: usize },
    LayerNorm { x: Var, gain: Var, bias: Var, normed: Vec<f64>, rstd: Vec<f64> },
    Dropout { x: Var, mask: Vec<f64> },
    Concat { parts: Vec<Var>, axis: usize },
    Reshape { x: Var },
    Transpose { x: Var },
    SumAxis { x: Var, axis: usize },
    SumAll { x: Var },
    GatherRows { x: Var, rows: Vec<usize> },
    Conv1d { input: Var, filters: Var, biases: Var, stride: usize, pairing: ConvPairing },
    CrossEntropy { logits: Var, targets: Vec<usize>, weights: Vec<f64>, probs: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Option<Tensor>,
    requires_grad: bool,
}

/// Operation tape. Nodes are appended in creation order, so every node's
/// inputs precede it; [`Graph::backward`] walks the tape in reverse.
///
/// Parameter nodes borrow their values from a [`ParamStore`] instead of
/// copying them.
#[derive(Debug)]
pub struct Graph<'p> {
    params: Option<&'p ParamStore>,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
    leaf_grads: Vec<Option<Vec<f64>>>,
    sparse_rows: bool,
    /// Row gradients of gathered parameter tables, when `sparse_rows` is set.
    row_grads: HashMap<ParamId, Vec<(usize, Vec<f64>)>>,
}

impl Default for Graph<'static> {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph<'static> {
    pub fn new() -> Self {
        Graph {
            params: None,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            leaf_grads: Vec::new(),
            sparse_rows: false,
            row_grads: HashMap::new(),
        }
    }
}

impl<'p> Graph<'p> {
    pub fn with_params(store: &'p ParamStore) -> Self {
        Graph {
            params: Some(store),
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            leaf_grads: Vec::new(),
            sparse_rows: false,
            row_grads: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value: Some(value),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t, false)
    }

    /// Input whose gradient is tracked.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t, true)
    }

    /// Node for a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        assert!(self.params.is_some(), "graph has no parameter store");
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.expect("parameter store").get(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    /// Accumulated gradient of a leaf or parameter node after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.leaf_grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn param_grad(&self, id: ParamId) -> Option<&[f64]> {
        self.param_vars.get(&id).and_then(|&v| self.grad(v))
    }

    /// Keeps gradients of rows gathered straight from a parameter (embedding
    /// tables) sparse. They then reach only [`Graph::accumulate_param_grads`],
    /// not [`Graph::grad`].
    pub fn set_sparse_param_rows(&mut self, on: bool) {
        self.sparse_rows = on;
    }

    /// Adds every parameter gradient held by this graph into `buf`.
    pub fn accumulate_param_grads(&self, buf: &mut GradBuffer) {
        for (&id, &v) in &self.param_vars {
            if let Some(g) = self.grad(v) {
                buf.add(id, g);
            }
        }
        for (&id, rows) in &self.row_grads {
            let width = self.params.expect("parameter store").get(id).shape()[1];
            let rows: Vec<(usize, &[f64])> = rows.iter().map(|(r, g)| (*r, g.as_slice())).collect();
            buf.add_sparse_rows(id, width, &rows);
        }
    }

    pub fn zero_grads(&mut self) {
        self.leaf_grads.clear();
        self.row_grads.clear();
    }

    // ---------------------------------------------------------------- ops

    /// Batched matrix product `[..., p, q] x [..., q, r] -> [..., p, r]` with
    /// broadcast leading dimensions.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let plan = MatmulPlan::new(&sa, &sb)?;
        let (ta, tb) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; plan.batch_count() * plan.p * plan.r];
        for (k, (&oa, &ob)) in plan.ia.iter().zip(&plan.ib).enumerate() {
            mm_acc(
                &ta[oa * plan.p * plan.q..(oa + 1) * plan.p * plan.q],
                &tb[ob * plan.q * plan.r..(ob + 1) * plan.q * plan.r],
                &mut out[k * plan.p * plan.r..(k + 1) * plan.p * plan.r],
                plan.p,
                plan.q,
                plan.r,
            );
        }
        let mut shape = plan.out_batch.clone();
        shape.extend([plan.p, plan.r]);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::MatMul { a, b }, Tensor::new(shape, out)?, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, |a, b| Op::Add { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, |a, b| Op::Mul { a, b })
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: impl FnOnce(Var, Var) -> Op,
    ) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let out_shape = broadcast_shape(sa, sb).ok_or_else(|| TensorError::ShapeMismatch {
            op: name,
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        })?;
        let (ta, tb) = (self.value(a).data(), self.value(b).data());
        let data: Vec<f64> = if sa == sb {
            ta.iter().zip(tb).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let (ia, ib) = broadcast_index_maps(sa, sb, &out_shape);
            ia.iter().zip(&ib).map(|(&i, &j)| f(ta[i], tb[j])).collect()
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(op(a, b), Tensor::new(out_shape, data)?, rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|v| v * factor).collect();
        let out = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(Op::Scale { x, factor }, out, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| v.max(0.0)).collect();
        let out = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(Op::Relu { x }, out, rg)
    }

    /// Side of zero of every ReLU input, in tape order. Two evaluations with
    /// equal patterns lie on the same smooth piece of the function.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu { x } => Some(x),
                _ => None,
            })
            .flat_map(|x| self.value(x).data().iter().map(|&v| v > 0.0))
            .collect()
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        let (outer, len, inner) = axis_split(t.shape(), axis, "softmax")?;
        if t.data().iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: "softmax" });
        }
        let src = t.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * len + k) * inner + i;
                let max = (0..len).map(|k| src[at(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for k in 0..len {
                    let e = (src[at(k)] - max).exp();
                    out[at(k)] = e;
                    total += e;
                }
                for k in 0..len {
                    out[at(k)] /= total;
                }
            }
        }
        let out = Tensor::new(t.shape().to_vec(), out)?;
        let rg = self.rg(x);
        Ok(self.push(Op::Softmax { x, axis }, out, rg))
    }

    /// Normalizes the last axis to zero mean / unit variance, then applies
    /// `gain` and `bias` (both shaped like the last axis).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 || !eps.is_finite() {
            return Err(TensorError::InvalidArgument(format!("layer_norm eps must be positive, got {eps}")));
        }
        let t = self.value(x);
        let width = *t.shape().last().ok_or_else(|| TensorError::InvalidArgument("layer_norm on a scalar".into()))?;
        for (name, p) in [("gain", gain), ("bias", bias)] {
            if self.shape(p) != [width] {
                return Err(TensorError::ShapeMismatch {
                    op: if name == "gain" { "layer_norm gain" } else { "layer_norm bias" },
                    lhs: t.shape().to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let rows = t.numel() / width;
        let mut normed = vec![0.0; t.numel()];
        let mut out = vec![0.0; t.numel()];
        let mut rstd = vec![0.0; rows];
        for r in 0..rows {
            let row = &t.data()[r * width..(r + 1) * width];
            let mean = row.iter().sum::<f64>() / width as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / width as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..width {
                let n = (row[c] - mean) * rs;
                normed[r * width + c] = n;
                out[r * width + c] = n * g[c] + b[c];
            }
        }
        let out = Tensor::new(t.shape().to_vec(), out)?;
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(Op::LayerNorm { x, gain, bias, normed, rstd }, out, rg))
    }

    /// Inverted dropout. Identity (the same node) when not training or `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut RngState, training: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::InvalidArgument(format!("dropout probability must be in [0, 1), got {p}")));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let t = self.value(x);
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..t.numel())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let data = t.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(Op::Dropout { x, mask }, out, rg))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::InvalidArgument("concat of zero tensors".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(TensorError::AxisOutOfRange { op: "concat", axis, rank: base.len() });
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible =
                s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(TensorError::ShapeMismatch { op: "concat", lhs: base, rhs: s.to_vec() });
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let t = self.value(p);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Op::Concat { parts: parts.to_vec(), axis }, Tensor::new(shape, data)?, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x);
        if shape.iter().product::<usize>() != t.numel() {
            return Err(TensorError::ShapeMismatch { op: "reshape", lhs: t.shape().to_vec(), rhs: shape.to_vec() });
        }
        let out = Tensor::new(shape.to_vec(), t.data().to_vec())?;
        let rg = self.rg(x);
        Ok(self.push(Op::Reshape { x }, out, rg))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let rank = t.rank();
        if rank < 2 {
            return Err(TensorError::InvalidArgument(format!("transpose needs rank >= 2, got {rank}")));
        }
        let (p, q) = (t.shape()[rank - 2], t.shape()[rank - 1]);
        let batch = t.numel() / (p * q);
        let src = t.data();
        let mut data = vec![0.0; src.len()];
        for b in 0..batch {
            let off = b * p * q;
            for i in 0..p {
                for j in 0..q {
                    data[off + j * p + i] = src[off + i * q + j];
                }
            }
        }
        let mut shape = t.shape().to_vec();
        shape.swap(rank - 2, rank - 1);
        let rg = self.rg(x);
        Ok(self.push(Op::Transpose { x }, Tensor::new(shape, data)?, rg))
    }

    /// Sum along `axis`; the axis is kept with size 1 when `keepdim`.
    pub fn sum_axis(&mut self, x: Var, axis: usize, keepdim: bool) -> Result<Var> {
        let t = self.value(x);
        let (outer, len, inner) = axis_split(t.shape(), axis, "sum_axis")?;
        let src = t.data();
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..len {
                let row = &src[(o * len + k) * inner..(o * len + k + 1) * inner];
                for (acc, v) in data[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        let mut shape = t.shape().to_vec();
        if keepdim {
            shape[axis] = 1;
        } else {
            shape.remove(axis);
        }
        let rg = self.rg(x);
        Ok(self.push(Op::SumAxis { x, axis }, Tensor::new(shape, data)?, rg))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Op::SumAll { x }, Tensor::scalar(total), rg)
    }

    /// Selects rows (indices along axis 0), duplicates allowed.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let t = self.value(x);
        if t.rank() == 0 || rows.is_empty() {
            return Err(TensorError::InvalidArgument("gather_rows needs rank >= 1 and at least one row".into()));
        }
        let n = t.shape()[0];
        let width = t.numel() / n;
        let mut data = Vec::with_capacity(rows.len() * width);
        for &r in rows {
            if r >= n {
                return Err(TensorError::InvalidArgument(format!("row {r} out of range for {n} rows")));
            }
            data.extend_from_slice(&t.data()[r * width..(r + 1) * width]);
        }
        let mut shape = t.shape().to_vec();
        shape[0] = rows.len();
        let rg = self.rg(x);
        Ok(self.push(Op::GatherRows { x, rows: rows.to_vec() }, Tensor::new(shape, data)?, rg))
    }

    /// Convolution with data-dependent filters over non-overlapping windows.
    ///
    /// `input` is `[rows, len]`, `filters` is `[groups, n_filters, stride]`
    /// (filter size equals stride) and `biases` is `[groups, n_filters]` or
    /// `[groups, 1]`. Each group's feature maps are flattened filter-major,
    /// giving `n_filters * len / stride` values per (row, group).
    pub fn conv1d_dynamic(
        &mut self,
        input: Var,
        filters: Var,
        biases: Var,
        stride: usize,
        pairing: ConvPairing,
    ) -> Result<Var> {
        let geom = ConvGeom::new(self.shape(input), self.shape(filters), self.shape(biases), stride, pairing)?;
        let (x, w, b) = (self.value(input).data(), self.value(filters).data(), self.value(biases).data());
        let mut out = vec![0.0; geom.out_len()];
        geom.for_each(|o, xi, wi, bi| {
            let mut acc = b[bi];
            for s in 0..geom.stride {
                acc += x[xi + s] * w[wi + s];
            }
            out[o] = acc;
        });
        let rg = self.rg(input) || self.rg(filters) || self.rg(biases);
        let shape = geom.out_shape();
        Ok(self.push(Op::Conv1d { input, filters, biases, stride, pairing }, Tensor::new(shape, out)?, rg))
    }

    /// Weighted token cross-entropy: `sum_i weights[i] * -log softmax(logits_i)[targets[i]]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], weights: &[f64]) -> Result<Var> {
        let t = self.value(logits);
        if t.rank() != 2 || t.shape()[0] != targets.len() || weights.len() != targets.len() {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                lhs: t.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let classes = t.shape()[1];
        if let Some(&bad) = targets.iter().find(|&&c| c >= classes) {
            return Err(TensorError::InvalidArgument(format!("target class {bad} out of range for {classes} classes")));
        }
        if t.data().iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: "cross_entropy" });
        }
        let mut probs = vec![0.0; t.numel()];
        let mut loss = 0.0;
        for (i, (&target, &w)) in targets.iter().zip(weights).enumerate() {
            let row = &t.data()[i * classes..(i + 1) * classes];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for c in 0..classes {
                probs[i * classes + c] = (row[c] - lse).exp();
            }
            loss += w * (lse - row[target]);
        }
        let rg = self.rg(logits);
        Ok(self.push(
            Op::CrossEntropy { logits, targets: targets.to_vec(), weights: weights.to_vec(), probs },
            Tensor::scalar(loss),
            rg,
        ))
    }

    // ---------------------------------------------------------- backward

    /// Reverse pass from a scalar `loss`. Leaf and parameter gradients
    /// accumulate across calls until [`Graph::zero_grads`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss);
        if self.value(loss).numel() != 1 {
            return Err(TensorError::NonScalarLoss(shape.to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        if self.leaf_grads.len() < self.nodes.len() {
            self.leaf_grads.resize(self.nodes.len(), None);
        }
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            match &self.nodes[idx].op {
                Op::GatherRows { x, rows } if self.sparse_rows && matches!(self.nodes[x.0].op, Op::Param(_)) => {
                    let Op::Param(id) = self.nodes[x.0].op else { unreachable!() };
                    let width = g.len() / rows.len();
                    let entry = self.row_grads.entry(id).or_default();
                    entry.extend(rows.iter().enumerate().map(|(k, &r)| (r, g[k * width..(k + 1) * width].to_vec())));
                }
                Op::Leaf | Op::Param(_) => {
                    let slot = self.leaf_grads[idx].get_or_insert_with(|| vec![0.0; g.len()]);
                    for (a, v) in slot.iter_mut().zip(&g) {
                        *a += v;
                    }
                }
                _ => self.propagate(idx, &g, &mut grads)?,
            }
        }
        Ok(())
    }

    fn sink<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        if !self.rg(v) {
            return None;
        }
        let n = self.value(v).numel();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let out = self.nodes[idx].value.as_ref().expect("op node has a value");
        match &self.nodes[idx].op {
            Op::Leaf | Op::Param(_) => unreachable!(),
            Op::MatMul { a, b } => {
                let plan = MatmulPlan::new(self.shape(*a), self.shape(*b))?;
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                let (p, q, r) = (plan.p, plan.q, plan.r);
                if let Some(ga) = self.sink(grads, *a) {
                    for (k, (&oa, &ob)) in plan.ia.iter().zip(&plan.ib).enumerate() {
                        let gk = &g[k * p * r..(k + 1) * p * r];
                        let bk = &tb[ob * q * r..(ob + 1) * q * r];
                        // dA += G B^T
                        gemm(p, r, q, gk, (r, 1), bk, (1, r), &mut ga[oa * p * q..(oa + 1) * p * q]);
                    }
                }
                if let Some(gb) = self.sink(grads, *b) {
                    for (k, (&oa, &ob)) in plan.ia.iter().zip(&plan.ib).enumerate() {
                        let gk = &g[k * p * r..(k + 1) * p * r];
                        let ak = &ta[oa * p * q..(oa + 1) * p * q];
                        // dB += A^T G
                        gemm(q, p, r, ak, (1, q), gk, (r, 1), &mut gb[ob * q * r..(ob + 1) * q * r]);
                    }
                }
            }
            Op::Add { a, b } | Op::Mul { a, b } => {
                let is_mul = matches!(self.nodes[idx].op, Op::Mul { .. });
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (ia, ib) = if sa == sb {
                    let id: Vec<usize> = (0..g.len()).collect();
                    (id.clone(), id)
                } else {
                    broadcast_index_maps(sa, sb, out.shape())
                };
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.sink(grads, *a) {
                    for k in 0..g.len() {
                        ga[ia[k]] += if is_mul { g[k] * tb[ib[k]] } else { g[k] };
                    }
                }
                if let Some(gb) = self.sink(grads, *b) {
                    for k in 0..g.len() {
                        gb[ib[k]] += if is_mul { g[k] * ta[ia[k]] } else { g[k] };
                    }
                }
            }
            Op::Scale { x, factor } => {
                if let Some(gx) = self.sink(grads, *x) {
                    for (a, v) in gx.iter_mut().zip(g) {
                        *a += v * factor;
                    }
                }
            }
            Op::Relu { x } => {
                let tx = self.value(*x).data();
                if let Some(gx) = self.sink(grads, *x) {
                    for k in 0..g.len() {
                        if tx[k] > 0.0 {
                            gx[k] += g[k];
                        }
                    }
                }
            }
            Op::Softmax { x, axis } => {
                let (outer, len, inner) = axis_split(out.shape(), *axis, "softmax")?;
                let y = out.data();
                if let Some(gx) = self.sink(grads, *x) {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |k: usize| (o * len + k) * inner + i;
                            let dot: f64 = (0..len).map(|k| g[at(k)] * y[at(k)]).sum();
                            for k in 0..len {
                                gx[at(k)] += y[at(k)] * (g[at(k)] - dot);
                            }
                        }
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, normed, rstd } => {
                let width = *out.shape().last().unwrap();
                let rows = rstd.len();
                let gn = self.value(*gain).data();
                if let Some(gg) = self.sink(grads, *gain) {
                    for r in 0..rows {
                        for c in 0..width {
                            gg[c] += g[r * width + c] * normed[r * width + c];
                        }
                    }
                }
                if let Some(gb) = self.sink(grads, *bias) {
                    for r in 0..rows {
                        for c in 0..width {
                            gb[c] += g[r * width + c];
                        }
                    }
                }
                if let Some(gx) = self.sink(grads, *x) {
                    for r in 0..rows {
                        let base = r * width;
                        let mut mean_d = 0.0;
                        let mut mean_dn = 0.0;
                        for c in 0..width {
                            let d = g[base + c] * gn[c];
                            mean_d += d;
                            mean_dn += d * normed[base + c];
                        }
                        mean_d /= width as f64;
                        mean_dn /= width as f64;
                        for c in 0..width {
                            let d = g[base + c] * gn[c];
                            gx[base + c] += rstd[r] * (d - mean_d - normed[base + c] * mean_dn);
                        }
                    }
                }
            }
            Op::Dropout { x, mask } => {
                if let Some(gx) = self.sink(grads, *x) {
                    for k in 0..g.len() {
                        gx[k] += g[k] * mask[k];
                    }
                }
            }
            Op::Concat { parts, axis } => {
                let shape = out.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[*axis] * inner;
                let mut offset = 0;
                for &p in parts {
                    let chunk = self.shape(p)[*axis] * inner;
                    if let Some(gp) = self.sink(grads, p) {
                        for o in 0..outer {
                            let src = &g[o * total + offset..o * total + offset + chunk];
                            for (a, v) in gp[o * chunk..(o + 1) * chunk].iter_mut().zip(src) {
                                *a += v;
                            }
                        }
                    }
                    offset += chunk;
                }
            }
            Op::Reshape { x } => {
                if let Some(gx) = self.sink(grads, *x) {
                    for (a, v) in gx.iter_mut().zip(g) {
                        *a += v;
                    }
                }
            }
            Op::Transpose { x } => {
                let s = self.shape(*x);
                let rank = s.len();
                let (p, q) = (s[rank - 2], s[rank - 1]);
                if let Some(gx) = self.sink(grads, *x) {
                    let batch = g.len() / (p * q);
                    for b in 0..batch {
                        let off = b * p * q;
                        for i in 0..p {
                            for j in 0..q {
                                gx[off + i * q + j] += g[off + j * p + i];
                            }
                        }
                    }
                }
            }
            Op::SumAxis { x, axis } => {
                let (outer, len, inner) = axis_split(self.shape(*x), *axis, "sum_axis")?;
                if let Some(gx) = self.sink(grads, *x) {
                    for o in 0..outer {
                        for k in 0..len {
                            for i in 0..inner {
                                gx[(o * len + k) * inner + i] += g[o * inner + i];
                            }
                        }
                    }
                }
            }
            Op::SumAll { x } => {
                if let Some(gx) = self.sink(grads, *x) {
                    gx.iter_mut().for_each(|a| *a += g[0]);
                }
            }
            Op::GatherRows { x, rows } => {
                let width = out.numel() / rows.len();
                if let Some(gx) = self.sink(grads, *x) {
                    for (k, &r) in rows.iter().enumerate() {
                        for c in 0..width {
                            gx[r * width + c] += g[k * width + c];
                        }
                    }
                }
            }
            Op::Conv1d { input, filters, biases, stride, pairing } => {
                let geom = ConvGeom::new(
                    self.shape(*input),
                    self.shape(*filters),
                    self.shape(*biases),
                    *stride,
                    *pairing,
                )?;
                let (x, w) = (self.value(*input).data(), self.value(*filters).data());
                if let Some(gx) = self.sink(grads, *input) {
                    geom.for_each(|o, xi, wi, _| {
                        for s in 0..geom.stride {
                            gx[xi + s] += g[o] * w[wi + s];
                        }
                    });
                }
                if let Some(gw) = self.sink(grads, *filters) {
                    geom.for_each(|o, xi, wi, _| {
                        for s in 0..geom.stride {
                            gw[wi + s] += g[o] * x[xi + s];
                        }
                    });
                }
                if let Some(gb) = self.sink(grads, *biases) {
                    geom.for_each(|o, _, _, bi| gb[bi] += g[o]);
                }
            }
            Op::CrossEntropy { logits, targets, weights, probs } => {
                let classes = self.shape(*logits)[1];
                if let Some(gl) = self.sink(grads, *logits) {
                    for (i, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                        for c in 0..classes {
                            let onehot = if c == t { 1.0 } else { 0.0 };
                            gl[i * classes + c] += g[0] * w * (probs[i * classes + c] - onehot);
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn axis_split(shape: &[usize], axis: usize, op: &'static str) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(TensorError::AxisOutOfRange { op, axis, rank: shape.len() });
    }
    Ok((
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    ))
}

/// `out[p x r] += a[p x q] * b[q x r]`
/// Below this many multiply-adds the packing overhead of the blocked kernel
/// outweighs its gain.
const GEMM_MIN_WORK: usize = 4096;

/// `c[m, n] += A[m, k] B[k, n]`, with `A` and `B` given as (row, column)
/// strided views so transposes need no copy.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], (rsa, csa): (usize, usize), b: &[f64], (rsb, csb): (usize, usize), c: &mut [f64]) {
    let last = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs;
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    assert!(last(m, k, rsa, csa) < a.len() && last(k, n, rsb, csb) < b.len() && m * n <= c.len());
    if m * k * n < GEMM_MIN_WORK {
        for i in 0..m {
            for t in 0..k {
                let av = a[i * rsa + t * csa];
                if av == 0.0 {
                    continue;
                }
                let row = &mut c[i * n..(i + 1) * n];
                for (j, o) in row.iter_mut().enumerate() {
                    *o += av * b[t * rsb + j * csb];
                }
            }
        }
        return;
    }
    // SAFETY: the assertion above keeps every strided access in bounds and
    // `c` does not alias `a` or `b` (it is a distinct `&mut`).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn mm_acc(a: &[f64], b: &[f64], out: &mut [f64], p: usize, q: usize, r: usize) {
    gemm(p, q, r, a, (q, 1), b, (r, 1), out);
}

struct MatmulPlan {
    p: usize,
    q: usize,
    r: usize,
    out_batch: Vec<usize>,
    ia: Vec<usize>,
    ib: Vec<usize>,
}

impl MatmulPlan {
    fn new(sa: &[usize], sb: &[usize]) -> Result<Self> {
        let mismatch = || TensorError::ShapeMismatch { op: "matmul", lhs: sa.to_vec(), rhs: sb.to_vec() };
        if sa.len() < 2 || sb.len() < 2 {
            return Err(mismatch());
        }
        let (p, q) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (q2, r) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if q != q2 {
            return Err(mismatch());
        }
        let (ba, bb) = (&sa[..sa.len() - 2], &sb[..sb.len() - 2]);
        let out_batch = broadcast_shape(ba, bb).ok_or_else(mismatch)?;
        let (ia, ib) = broadcast_index_maps(ba, bb, &out_batch);
        Ok(Self { p, q, r, out_batch, ia, ib })
    }

    fn batch_count(&self) -> usize {
        self.ia.len()
    }
}

struct ConvGeom {
    rows: usize,
    len: usize,
    groups: usize,
    n_filters: usize,
    stride: usize,
    bias_per_filter: bool,
    pairing: ConvPairing,
}

impl ConvGeom {
    fn new(input: &[usize], filters: &[usize], biases: &[usize], stride: usize, pairing: ConvPairing) -> Result<Self> {
        let bad = |reason: String| TensorError::InvalidArgument(format!("conv1d_dynamic: {reason}"));
        if input.len() != 2 || filters.len() != 3 || biases.len() != 2 {
            return Err(bad(format!(
                "expected input [rows, len], filters [groups, filters, size], biases [groups, k]; got {input:?}, {filters:?}, {biases:?}"
            )));
        }
        let (rows, len) = (input[0], input[1]);
        let (groups, n_filters, size) = (filters[0], filters[1], filters[2]);
        if stride == 0 || len % stride != 0 {
            return Err(bad(format!("input length {len} is not divisible by stride {stride}")));
        }
        if size != stride {
            return Err(bad(format!("filter size {size} must equal stride {stride}")));
        }
        if biases[0] != groups || (biases[1] != 1 && biases[1] != n_filters) {
            return Err(bad(format!("bias shape {biases:?} does not fit {groups} groups of {n_filters} filters")));
        }
        if pairing == ConvPairing::RowWise && groups != rows {
            return Err(bad(format!("row-wise pairing needs one filter group per row ({rows} rows, {groups} groups)")));
        }
        Ok(Self { rows, len, groups, n_filters, stride, bias_per_filter: biases[1] != 1, pairing })
    }

    fn windows(&self) -> usize {
        self.len / self.stride
    }

    fn width(&self) -> usize {
        self.n_filters * self.windows()
    }

    fn out_shape(&self) -> Vec<usize> {
        match self.pairing {
            ConvPairing::AllGroups => vec![self.rows, self.groups, self.width()],
            ConvPairing::RowWise => vec![self.rows, self.width()],
        }
    }

    fn out_len(&self) -> usize {
        self.out_shape().iter().product()
    }

    /// Visits every output element with (output index, input offset, filter offset, bias index).
    fn for_each(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        let windows = self.windows();
        let mut visit = |o: usize, r: usize, grp: usize| {
            for flt in 0..self.n_filters {
                let wi = (grp * self.n_filters + flt) * self.stride;
                let bi = if self.bias_per_filter { grp * self.n_filters + flt } else { grp };
                for w in 0..windows {
                    f(o + flt * windows + w, r * self.len + w * self.stride, wi, bi);
                }
            }
        };
        match self.pairing {
            ConvPairing::AllGroups => {
                for r in 0..self.rows {
                    for grp in 0..self.groups {
                        visit((r * self.groups + grp) * self.width(), r, grp);
                    }
                }
            }
            ConvPairing::RowWise => {
                for r in 0..self.rows {
                    visit(r * self.width(), r, r);
                }
            }
        }
    }
}
