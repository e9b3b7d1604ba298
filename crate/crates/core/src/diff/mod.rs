//! Reverse-mode automatic differentiation over dense tensors, the Adam
//! optimizer, and a finite-difference gradient checker.
//!
//! A [`Graph`] is an append-only tape rebuilt for every training step.
//! Parameters enter as [`Graph::param`] leaves; [`Graph::backward`] returns
//! their gradients in a deterministic order.

mod adam;
mod gradcheck;
mod graph;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{check_gradients, GradCheckReport, GRADCHECK_TOLERANCE};
pub use graph::{conv_out_len, log_sum_exp, Gradients, Graph, NodeId};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiffError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}
