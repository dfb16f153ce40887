//! Minimal dense-tensor engine with reverse-mode differentiation.
//!
//! Everything is `f64`. The op catalog is deliberately small: exactly what
//! the embedding networks and the attack losses need. Shapes never broadcast
//! except for the bias add inside [`Graph::dense`] and [`Graph::conv2d`],
//! and any op producing a NaN or infinity fails with
//! [`NumericsError::NonFinite`].

mod gemm;
mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{finite_diff_check, GradCheck};
pub use graph::{ConvParams, Gradients, Graph, OpKind, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("invalid tensor shape {shape:?}: dimensions must be positive and non-empty")]
    InvalidShape { shape: Vec<usize> },
    #[error("shape {shape:?} needs {} elements, got {len}", shape.iter().product::<usize>())]
    LengthMismatch { shape: Vec<usize>, len: usize },
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("{op} produced a non-finite value at element {index}")]
    NonFinite { op: &'static str, index: usize },
    #[error("{op}: zero-norm input")]
    ZeroNorm { op: &'static str },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("variable does not belong to this graph")]
    ForeignVar,
    #[error("backward called before any forward computation")]
    NotForwarded,
    #[error("graph already consumed by a backward pass")]
    GraphConsumed,
    #[error("backward root must be a scalar, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
}
