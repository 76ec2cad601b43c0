//! Dense `f64` tensors, tape-based reverse-mode autodiff and Adam.
//!
//! Everything here is single-threaded and sums in a fixed row-major order, so
//! identical inputs give bit-identical outputs.

mod adam;
mod gradcheck;
mod graph;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Gradients, Graph, Node, ParamId, ParamStore, Var};
pub use tensor::{matmul, sigmoid, sigmoid_scalar, softmax_rows, Tensor};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumericsError {
    #[error("dimension error: {0}")]
    Shape(String),
    #[error("contract error: {0}")]
    Contract(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
}
