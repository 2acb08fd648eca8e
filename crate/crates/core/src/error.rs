use thiserror::Error;

/// Unified error type for tensor, model, data, and evaluation failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("unknown op id: {0}")]
    UnknownOp(String),

    #[error("{op}: missing or invalid attribute: {attr}")]
    BadAttribute { op: &'static str, attr: String },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("{what} must be divisible by {required} (got {got})")]
    Divisibility {
        what: String,
        required: usize,
        got: usize,
    },

    #[error("unknown architecture: {0}")]
    UnknownArchitecture(String),

    #[error("unknown preset: {0}")]
    UnknownPreset(String),

    #[error("loss is not a scalar (shape {0})")]
    LossNotScalar(String),

    #[error("variable is not on this tape")]
    NotOnTape,

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("data validation: {0}")]
    DataValidation(String),

    #[error("undefined statistical test: {0}")]
    UndefinedTest(String),

    #[error("checkpoint format: {0}")]
    CheckpointFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(op: &'static str, expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            expected: expected.into(),
            got: got.into(),
        }
    }
}
