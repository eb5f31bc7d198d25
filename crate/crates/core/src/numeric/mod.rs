//! Dense tensors, reverse-mode differentiation, initialization and AdaDelta.

mod adadelta;
mod graph;
mod init;
mod param;
mod tensor;

use thiserror::Error;

pub use adadelta::{adadelta_update, AdaDelta, AdaDeltaConfig, AdaDeltaState};
pub use graph::{Graph, Var};
pub use init::{init_gaussian, init_gaussian_with};
pub use param::{Gradients, ParamId, ParamStore, Parameter};
pub use tensor::{log_sum_exp, sigmoid, softmax, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericError {
    #[error("{op}: dimension mismatch ({detail})")]
    Shape { op: &'static str, detail: String },
    #[error("{op}: non-finite value")]
    NonFinite { op: &'static str },
    #[error("{op}: index {index} out of range for length {len}")]
    Index {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("{0}")]
    Contract(String),
}
