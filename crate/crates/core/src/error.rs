use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("sampling failed: {0}")]
    Sampling(String),

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable category name.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::EmptyDataset(_) => "empty-dataset",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::Config(_) => "config",
            Error::Shape(_) => "shape",
            Error::NonFinite(_) => "non-finite",
            Error::Sampling(_) => "sampling",
            Error::Invariant(_) => "invariant",
            Error::Checkpoint(_) => "checkpoint",
            Error::Json(_) => "json",
        }
    }

    /// Process exit code for this error category. Never 0.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 3,
            Error::Parse { .. } | Error::Json(_) => 4,
            Error::EmptyDataset(_) => 5,
            Error::InvalidArgument(_) | Error::Config(_) => 6,
            Error::Shape(_) | Error::Checkpoint(_) => 7,
            Error::NonFinite(_) => 8,
            Error::Sampling(_) => 9,
            Error::Invariant(_) => 10,
        }
    }
}
