use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("integer overflow while computing {0}")]
    Overflow(&'static str),

    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },

    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { offset: usize, name: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("corrupt model: {0}")]
    CorruptModel(String),

    #[error("malformed MatrixMarket file {path}: {message}")]
    MatrixMarket { path: PathBuf, message: String },

    #[error("malformed input: {0}")]
    Format(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Process exit code used by the command line front end:
    /// 1 usage error, 2 numerical failure, 3 I/O failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_)
            | Error::Syntax { .. }
            | Error::UnknownIdentifier { .. }
            | Error::DimensionMismatch { .. }
            | Error::ShapeMismatch(_) => 1,
            Error::Overflow(_)
            | Error::NonFinite(_)
            | Error::Factorization(_)
            | Error::NotSpd(_)
            | Error::Numerical(_)
            | Error::CorruptModel(_) => 2,
            Error::MatrixMarket { .. } | Error::Format(_) | Error::Io { .. } => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
