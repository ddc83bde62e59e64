//! Reverse-mode differentiation over dense matrices and sparse edge values.
//!
//! Sparse matrices enter the tape as an `nnz × 1` column of stored values plus
//! a shared [`SparsePattern`](crate::sparse::SparsePattern). Composing
//! [`Tape::expand_edges`] → [`Tape::degree_sum`] → [`Tape::rsqrt`] →
//! [`Tape::edge_scale`] builds the symmetric normalization from raw edge
//! parameters, so gradients reach `θ` through both endpoint degrees.

mod gradcheck;
mod tape;

pub use gradcheck::{finite_difference, grad_check, GradCheckReport, REL_ERROR_FLOOR};
pub use tape::{Gradients, Tape, Var, LOG_EPS};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("{op}: non-positive input {value} at entry {index}")]
    NonPositive { op: &'static str, index: usize, value: f64 },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("loss subset is empty")]
    EmptySubset,
    #[error("backward requires a 1x1 output, got {0}x{1}")]
    NotScalar(usize, usize),
    #[error("index {index} out of range for {len} rows")]
    Index { index: usize, len: usize },
}
