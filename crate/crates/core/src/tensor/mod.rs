//! Dense `f64` tensors and a tape-based reverse-mode autodiff graph.
//!
//! [`Tensor`] is a plain value (shape + row-major data). Differentiable
//! computation happens on a [`Graph`], which records every operation in
//! creation order and replays it backwards in [`Graph::backward`]. The graph
//! is rebuilt for every forward pass, so data-dependent topology (filters
//! generated from activations, variable sequence lengths) needs no special
//! handling.

mod graph;
mod params;
mod rng;

#[cfg(test)]
mod ops_tests;

pub use graph::{ConvPairing, Graph, Var};
pub use params::{GradBuffer, ParamGroup, ParamId, ParamStore};
pub use rng::RngState;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },
    #[error("{op}: axis {axis} out of range for rank {rank}")]
    AxisOutOfRange {
        op: &'static str,
        axis: usize,
        rank: usize,
    },
    #[error("{op}: non-finite value in input")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("{0}")]
    InvalidArgument(String),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

/// A dense row-major array of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        check_shape(&shape)?;
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::InvalidShape {
                shape,
                reason: format!("expected {numel} elements, got {}", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Result<Self> {
        let shape = shape.into();
        check_shape(&shape)?;
        let numel = shape.iter().product();
        Ok(Self {
            shape,
            data: vec![value; numel],
        })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::full(shape, 1.0)
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// Builds a 2-D tensor from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(TensorError::InvalidShape {
                    shape: vec![rows.len(), cols],
                    reason: format!("ragged row of length {}", row.len()),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(vec![rows.len(), cols], data)
    }

    /// Square matrix with ones on the diagonal; `rows x cols` with the
    /// diagonal truncated when not square.
    pub fn eye(rows: usize, cols: usize) -> Result<Self> {
        let mut t = Self::zeros(vec![rows, cols])?;
        for i in 0..rows.min(cols) {
            t.data[i * cols + i] = 1.0;
        }
        Ok(t)
    }

    pub fn randn<R: Rng + ?Sized>(shape: impl Into<Vec<usize>>, std: f64, rng: &mut R) -> Result<Self> {
        let mut t = Self::zeros(shape)?;
        let normal = Normal::new(0.0, std)
            .map_err(|e| TensorError::InvalidArgument(format!("bad std {std}: {e}")))?;
        for x in &mut t.data {
            *x = normal.sample(rng);
        }
        Ok(t)
    }

    /// Uniform samples in `[-bound, bound)`.
    pub fn uniform<R: Rng + ?Sized>(shape: impl Into<Vec<usize>>, bound: f64, rng: &mut R) -> Result<Self> {
        let mut t = Self::zeros(shape)?;
        for x in &mut t.data {
            *x = rng.random_range(-bound..bound);
        }
        Ok(t)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Element at a multi-index.
    pub fn get(&self, index: &[usize]) -> f64 {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        let mut flat = 0;
        for (&i, &dim) in index.iter().zip(&self.shape) {
            assert!(i < dim, "index {index:?} out of bounds for {:?}", self.shape);
            flat = flat * dim + i;
        }
        self.data[flat]
    }

    /// Row `i` of a 2-D tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        assert_eq!(self.rank(), 2, "row() needs a matrix");
        let cols = self.shape[1];
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::new(shape, self.data.clone())
    }

    /// Largest absolute elementwise difference; shapes must agree.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.contains(&0) {
        return Err(TensorError::InvalidShape {
            shape: shape.to_vec(),
            reason: "dimensions must be at least 1".into(),
        });
    }
    Ok(())
}

/// Right-aligned broadcast of two shapes.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` as seen from a broadcast `out` shape (zero on broadcast axes).
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let offset = out.len() - shape.len();
    let mut strides = vec![0; out.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[offset + i] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// For every flat index of the broadcast output, the flat index into each operand.
pub(crate) fn broadcast_index_maps(a: &[usize], b: &[usize], out: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let sa = broadcast_strides(a, out);
    let sb = broadcast_strides(b, out);
    let numel: usize = out.iter().product();
    let mut ia = Vec::with_capacity(numel);
    let mut ib = Vec::with_capacity(numel);
    let mut counter = vec![0usize; out.len()];
    let (mut pa, mut pb) = (0usize, 0usize);
    for _ in 0..numel {
        ia.push(pa);
        ib.push(pb);
        for ax in (0..out.len()).rev() {
            counter[ax] += 1;
            pa += sa[ax];
            pb += sb[ax];
            if counter[ax] < out[ax] {
                break;
            }
            pa -= sa[ax] * out[ax];
            pb -= sb[ax] * out[ax];
            counter[ax] = 0;
        }
    }
    (ia, ib)
}
