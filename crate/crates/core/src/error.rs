use thiserror::Error;

/// Library-wide error type. Functions that can reject their inputs return
/// `Result<T>`; algorithmic failure modes that carry evidence (partition
/// construction) have their own witness-bearing types instead.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter violates a documented precondition.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The combinatorial structure of an input is wrong (bad vertex ids,
    /// duplicate edges, block not a tree, partition/instance mismatch, ...).
    #[error("structural error: {0}")]
    Structure(String),

    /// A text input failed to parse. `line` is 1-based.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// An exact computation was requested above its size cap.
    #[error("size cap exceeded: {0}")]
    CapExceeded(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub fn structure(msg: impl Into<String>) -> Self {
        Error::Structure(msg.into())
    }

    pub fn cap(msg: impl Into<String>) -> Self {
        Error::CapExceeded(msg.into())
    }
}
