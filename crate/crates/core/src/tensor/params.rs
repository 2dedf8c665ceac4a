use std::collections::HashMap;

use super::{Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Optimizer group. The backbone and the attention/classifier layers train
/// with separate learning rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Backbone,
    Head,
}

#[derive(Debug, Clone)]
struct Entry {
    name: String,
    value: Tensor,
    group: ParamGroup,
}

/// Named trainable tensors. Model structs hold [`ParamId`]s into a store;
/// graphs read parameter values straight from it without copying.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, group: ParamGroup) -> Result<ParamId, TensorError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(TensorError::InvalidArgument(format!("duplicate parameter name {name:?}")));
        }
        let id = ParamId(self.entries.len());
        self.index.insert(name.clone(), id);
        self.entries.push(Entry { name, value, group });
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn group(&self, id: ParamId) -> ParamGroup {
        self.entries[id.0].group
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    /// Scalar count of every parameter whose name starts with `prefix`.
    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|e| e.name.starts_with(prefix))
            .map(|e| e.value.numel())
            .sum()
    }

    /// Copy of all values, for best-epoch snapshots.
    pub fn snapshot(&self) -> Vec<Tensor> {
        self.entries.iter().map(|e| e.value.clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Tensor]) {
        assert_eq!(snapshot.len(), self.entries.len(), "snapshot from a different model");
        for (e, v) in self.entries.iter_mut().zip(snapshot) {
            e.value.clone_from(v);
        }
    }

    /// Overwrites a parameter with a tensor of identical shape.
    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<(), TensorError> {
        let cur = &mut self.entries[id.0].value;
        if cur.shape() != value.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "set_param",
                lhs: cur.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        *cur = value;
        Ok(())
    }
}

/// Per-parameter gradient accumulators matching a [`ParamStore`] layout.
#[derive(Debug, Clone)]
pub struct GradBuffer {
    grads: Vec<Vec<f64>>,
}

impl GradBuffer {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            grads: store.entries.iter().map(|e| vec![0.0; e.value.numel()]).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.grads[id.0]
    }

    pub fn add(&mut self, id: ParamId, grad: &[f64]) {
        for (acc, g) in self.grads[id.0].iter_mut().zip(grad) {
            *acc += g;
        }
    }

    pub fn add_sparse_rows(&mut self, id: ParamId, row_len: usize, rows: &[(usize, &[f64])]) {
        let buf = &mut self.grads[id.0];
        for &(r, g) in rows {
            for (acc, x) in buf[r * row_len..(r + 1) * row_len].iter_mut().zip(g) {
                *acc += x;
            }
        }
    }

    pub fn zero(&mut self) {
        for g in &mut self.grads {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.grads {
            g.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().flatten().all(|x| x.is_finite())
    }

    /// Adds `other` element-wise; both must come from the same store.
    pub fn merge(&mut self, other: &GradBuffer) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}
