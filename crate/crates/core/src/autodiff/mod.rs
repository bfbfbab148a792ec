//! Dense tensors with a tape-based reverse-mode autodiff.
//!
//! Everything is row-major and 2-D in practice; the only broadcast is a bias
//! vector added over the last dimension. Dropout is not provided: all
//! training is deterministic.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{grad_check, relative_error};
pub use graph::{AttentionLayout, Graph, Var, MASKED_LOGIT};
pub use tensor::{Scalar, Tensor};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: axis {axis} out of range for rank {rank}")]
    Axis {
        op: &'static str,
        axis: usize,
        rank: usize,
    },
    #[error("{op}: index {index} out of range ({len})")]
    Index {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("shape {shape:?} does not hold {len} elements")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("cross_entropy: every position is masked")]
    DegenerateBatch,
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
}
