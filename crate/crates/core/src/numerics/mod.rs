//! Dense tensors, a reverse-mode tape, and a finite-difference checker.

mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use gradcheck::{finite_diff_check, finite_diff_check_tensors, Bound, GradCheckOptions, GradCheckReport, GradMismatch};
pub use graph::{softmax_rows, Graph, Reduction, Var};
pub use params::{ParamId, ParamStore};
pub use tensor::{Scalar, Tensor};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("{op}: index {index} out of range for size {len}")]
    Index { op: &'static str, index: usize, len: usize },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite function value {0}")]
    NonFinite(f64),
}

#[cfg(test)]
mod tests;
