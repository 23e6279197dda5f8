//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A tensor/vector dimension did not match what the operation expects.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An operation was called in a state that cannot serve it
    /// (empty buffer, missing forward cache, empty state pool, ...).
    #[error("invalid state: {0}")]
    State(String),

    /// A non-finite value surfaced where finite math is required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A malformed row or cell in a trajectory CSV.
    #[error("ingestion error at row {row}: {msg}")]
    Ingestion { row: usize, msg: String },

    /// A caller-supplied argument is out of contract.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// The data cannot support the requested operation (e.g. fewer than
    /// six distinct dose values for quantile binning).
    #[error("degenerate data: {0}")]
    Degenerate(String),

    /// An off-policy estimate collapsed (no trajectory retained weight).
    #[error("degenerate estimate: {0}")]
    DegenerateEstimate(String),

    /// A checkpoint or config file failed to parse.
    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors that indicate numeric breakdown (exit code 2 in the CLI).
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric(_))
    }
}
