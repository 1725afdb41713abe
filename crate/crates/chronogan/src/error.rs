//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes do not conform to an operation's rule.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A numeric domain violation (log/sqrt of a negative, non-finite result,
    /// probability outside [0,1]).
    #[error("domain error: {0}")]
    Domain(String),

    /// A caller broke an API precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A loss went non-finite during training. Carries the epoch at which the
    /// divergence was detected.
    #[error("training diverged at epoch {epoch}: {reason}")]
    TrainingDiverged { epoch: usize, reason: String },

    /// Malformed text input. Row and column are 1-based and refer to the
    /// source file (header included).
    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },

    /// A binary or structured file failed validation.
    #[error("bad file format: {0}")]
    Format(String),

    /// Input is structurally valid but too degenerate for the operation
    /// (e.g. rank-deficient data fed to a 2-component projection).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Format(format!("csv: {other:?}")),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
