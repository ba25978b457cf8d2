//! Dense row-major tensors with reverse-mode differentiation.
//!
//! The op set is the minimum needed to train the quantizer and predictor on
//! CPU: matmul (plain and batched), strided 1-D convolution and its
//! transpose, elementwise arithmetic, relu, layer norm, softmax, embedding
//! lookup, concatenation, and the fused losses. All values are `f64`;
//! checkpoints store `f32` (see [`crate::container`]).
//!
//! Parallelism only ever splits work across disjoint output elements, so
//! results are bit-identical regardless of thread count.

mod graph;
mod ops;
mod optim;
mod params;

pub mod gradcheck;

pub use graph::{BackwardResult, Graph, NodeId};
pub use optim::AdamState;
pub use params::{normal_tensor, ParamId, ParamStore};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    BadRank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: shape {shape:?} implies {expected} values, got {actual}")]
    BadLength {
        op: &'static str,
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("{op}: index {index} out of range (limit {limit})")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        limit: usize,
    },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("non-finite gradient for parameter `{name}`")]
    NonFiniteGradient { name: String },
    #[error("unknown parameter `{name}`")]
    UnknownParam { name: String },
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Dense row-major tensor of `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, checking the element count and that every value is
    /// finite. NaN/Inf is an error state, not a representable tensor.
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::BadLength {
                op: "from_vec",
                shape,
                expected,
                actual: data.len(),
            });
        }
        let t = Tensor { shape, data };
        t.check_finite("from_vec")?;
        Ok(t)
    }

    /// Same as [`Tensor::from_vec`] but skips the finiteness scan. For ops
    /// whose outputs are finite by construction from finite inputs.
    pub(crate) fn from_vec_unchecked(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.shape.is_empty()
    }

    pub fn scalar_value(&self) -> f64 {
        debug_assert!(self.data.len() == 1);
        self.data[0]
    }

    /// Row-major flattening of the trailing axis: views the tensor as
    /// `[rows, last]`. Rank must be at least 1.
    pub(crate) fn rows_last(&self) -> (usize, usize) {
        let last = *self.shape.last().expect("rank >= 1");
        (self.data.len() / last.max(1), last)
    }

    pub fn check_finite(&self, op: &'static str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(TensorError::NonFinite { op })
        }
    }

    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(TensorError::BadLength {
                op: "reshape",
                shape,
                expected,
                actual: self.data.len(),
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Length of a strided 1-D convolution output: `ceil(t / stride)` under the
/// left-aligned zero-padded framing used throughout.
pub fn conv_out_len(t: usize, stride: usize) -> usize {
    t.div_ceil(stride)
}
