use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("constraint source error: {0}")]
    ConstraintSource(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("data error: {0}")]
    Data(String),
    #[error("size error: {0}")]
    Size(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Divergence { epoch: usize, loss: f64 },
    #[error("initialization error: {0}")]
    Initialization(String),
    #[error("degenerate cluster {cluster}: total soft mass {mass:e}")]
    DegenerateCluster { cluster: usize, mass: f64 },
    #[error("infinite divergence at row {row}, column {col}: q = 0 where p > 0")]
    InfiniteDivergence { row: usize, col: usize },
    #[error("schema version mismatch in {path}: found {found}, expected {expected}")]
    Schema {
        path: PathBuf,
        found: u32,
        expected: u32,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::Config(_) => 1,
            Error::Divergence { .. } | Error::DegenerateCluster { .. } => 3,
            _ => 2,
        }
    }
}
