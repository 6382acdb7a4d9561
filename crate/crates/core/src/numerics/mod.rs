//! Dense tensors with tape-based reverse-mode differentiation.
//!
//! The op set is exactly what the flow tokenizer, transformer backbone and
//! classification head need: matmul, broadcasting add/sub/mul, softmax (plain
//! and causal), sigmoid, SiLU, RMSNorm, transpose, reshape, slice, concat,
//! sum, mean and a floored log.

mod gradcheck;
mod optim;
mod param;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_param, GradCheckReport, GRAD_CHECK_FLOOR};
pub use optim::{Optimizer, OptimizerKind};
pub use param::{ParamId, ParamStore, Parameter};
pub use tape::{Tape, Var, LOG_FLOOR};
pub use tensor::{Scalar, Tensor};

use thiserror::Error;

#[derive(Clone, Debug, Error, PartialEq)]
#[error("shape error in {op}: {detail}")]
pub struct ShapeError {
    pub op: String,
    pub detail: String,
}

impl ShapeError {
    pub fn new(op: impl Into<String>, detail: impl Into<String>) -> Self {
        Self {
            op: op.into(),
            detail: detail.into(),
        }
    }
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum TensorError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("backward needs a one-element loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}
