use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by every layer of the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("matrix is not positive definite (pivot {pivot:e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("infeasible group assignment: {0}")]
    InfeasibleAssignment(String),
    #[error("lower-level iterate became non-finite at iteration {0}")]
    NonFiniteIterate(usize),
    #[error("tape does not match the supplied group assignment")]
    TapeMismatch,
    #[error("stage {stage} diverged (non-finite loss)")]
    StageDiverged { stage: usize },
    #[error("instance too large for enumeration: {0} candidates")]
    TooLarge(u128),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unsupported schema version {found} (expected {expected})")]
    SchemaVersionMismatch { expected: u32, found: u32 },
    #[error("checksum mismatch: {0}")]
    ChecksumMismatch(String),
    #[error("malformed file {path}: {msg}")]
    Malformed { path: PathBuf, msg: String },
    #[error("every cell for lambda = {0} failed")]
    LambdaColumnFailed(f64),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
