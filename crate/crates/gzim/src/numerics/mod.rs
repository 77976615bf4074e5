//! From-scratch tensor arithmetic with reverse-mode automatic differentiation.
//!
//! Everything is 64-bit floating point. A [`Graph`] records one forward pass;
//! [`Graph::backward`] replays it in reverse and accumulates gradients into
//! every `requires_grad` leaf. Layer primitives cover exactly what a
//! PilotNet-style network needs: valid convolution, dense layers, ReLU, both
//! dropout variants, bilinear upsampling and a handful of loss heads.

mod gradcheck;
mod graph;
mod optim;
mod tensor;

pub use gradcheck::{finite_diff_check, max_relative_error, FiniteDiffReport};
pub use graph::{Graph, NodeId};
pub use optim::{OptimizerKind, OptimizerState};
pub use tensor::Tensor;

/// Dropout behaviour switch. `Test` mode is deterministic for fixed inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropoutMode {
    Train,
    Test,
}

/// Errors raised by the numerics layer.
#[derive(Debug, thiserror::Error)]
pub enum NumericsError {
    #[error("dimension mismatch on axis {axis}: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        axis: usize,
        expected: usize,
        got: usize,
        context: &'static str,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, NumericsError>;
