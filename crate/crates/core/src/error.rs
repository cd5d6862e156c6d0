use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}: not a matrix file")]
    NotAMatrixFile(PathBuf),
    #[error("{path}: corrupt ({detail})")]
    Corrupt { path: PathBuf, detail: String },
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("insufficient snapshots: need at least 2, got {0}")]
    InsufficientSnapshots(usize),
    #[error("dimension mismatch in {context}: expected {expected}, got {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("order exceeds rank bound: requested {requested}, bound {bound}")]
    OrderExceedsRank { requested: usize, bound: usize },
    #[error("zero-energy spectrum")]
    ZeroEnergy,
    #[error("ill-conditioned truncation; reduce s (s = {order}, numerical rank {rank})")]
    IllConditioned { order: usize, rank: usize },
    #[error("full reconstruction disabled at this scale (n = {n}, cap {cap})")]
    ReconstructionDisabled { n: usize, cap: usize },
    #[error("non-diagonalizable reduced matrix (eigenvector condition {condition:.3e})")]
    NonDiagonalizable { condition: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("index {index} out of range for dimension {len}")]
    IndexOutOfRange { index: usize, len: usize },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
