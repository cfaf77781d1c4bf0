//! Reverse-mode automatic differentiation over rank-2 `f64` tensors.

mod kernels;
mod tape;
mod tensor;

pub use tape::{Axis, BatchNormState, Gradients, Op, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AdError {
    #[error("data of length {len} does not fit shape {shape:?}")]
    BadData { shape: [usize; 2], len: usize },
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("non-finite value produced by {op} at node {node}")]
    NonFinite { op: &'static str, node: usize },
    #[error("backward already called on this tape")]
    AlreadyBackpropagated,
    #[error("loss must be a 1x1 scalar, got {0:?}")]
    NotScalar([usize; 2]),
    #[error("node {0} is not a flagged input")]
    NotFlagged(usize),
    #[error("output must hold one scalar per row, got {0:?}")]
    NotScalarPerRow([usize; 2]),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
