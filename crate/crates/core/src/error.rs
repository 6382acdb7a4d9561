use thiserror::Error;

use crate::flow::FeatureMode;
use crate::numerics::{ShapeError, TensorError};

/// A violated flow-record invariant.
#[derive(Clone, Debug, Error, PartialEq)]
#[error("{}{invariant}: {detail}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
pub struct ValidationError {
    pub invariant: &'static str,
    pub detail: String,
    /// 1-based line in the source file, when the record came from one.
    pub line: Option<usize>,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(#[from] ValidationError),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("sequence length {len} exceeds max_seq {max}")]
    SeqTooLong { len: usize, max: usize },
    #[error("batch of {flows} flows is too small; at least {min} flows are required")]
    BatchTooSmall { flows: usize, min: usize },
    #[error("training labels contain a single class")]
    DegenerateLabels,
    #[error("dataset uses {data:?} features but the model expects {model:?}")]
    FeatureModeMismatch { data: FeatureMode, model: FeatureMode },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("unsupported checkpoint version {found} (this build reads {supported})")]
    Version { found: u32, supported: u32 },
    #[error("checkpoint checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<ShapeError> for Error {
    fn from(e: ShapeError) -> Self {
        Error::Tensor(TensorError::Shape(e))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
