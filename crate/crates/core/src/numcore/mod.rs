//! Dense `f64` tensors, a reverse-mode autodiff tape, deterministic
//! initialization and the Adam optimizer.

mod adam;
mod init;
mod rng;
mod tape;
mod tensor;

use thiserror::Error;

pub use adam::{clip_global_norm, AdamConfig, AdamState};
pub use init::{glorot_bound, init, InitScheme};
pub use rng::{splitmix64, Rng};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{relu, sigmoid, softplus, Tensor};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("softmax row {row} has every entry masked")]
    DegenerateRow { row: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
}

impl NumError {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Self::Shape { op, lhs: lhs.to_vec(), rhs: rhs.to_vec() }
    }
}
