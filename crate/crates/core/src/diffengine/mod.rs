//! Dense tensors, reverse-mode differentiation (including gradients of
//! gradient norms) and the Adam optimiser.

mod adam;
mod graph;
pub mod kernels;
mod layers;
mod tensor;

use thiserror::Error;

pub use adam::{AdamConfig, OptimState};
pub use graph::{Gradients, Graph, Var};
pub use kernels::ConvGeom;
pub use layers::{batch_norm, Bound, NormMode, ParamSet, BN_EPS, BN_MOMENTUM};
pub use tensor::{Element, Tensor};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("cannot reshape {from:?} into {to:?}")]
    Reshape { from: Vec<usize>, to: Vec<usize> },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("loss must be a scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("loss is not finite")]
    NonFiniteLoss,
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("{params} parameters but {grads} gradients")]
    ParamCount { params: usize, grads: usize },
    #[error("gradient requested with respect to a constant (node {0})")]
    NotDifferentiable(usize),
    #[error("missing parameter `{0}`")]
    MissingParam(String),
}
