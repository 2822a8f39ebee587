use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the reconstruction toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("truncated payload: header declares {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("size mismatch: header declares {expected} bytes, file carries {found}")]
    SizeMismatch { expected: usize, found: usize },
    #[error("truncated header")]
    TruncatedHeader,
    #[error("dimension {0} exceeds the 32-bit range of the file format")]
    DimensionOverflow(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unresolvable frequency: index {index} with {samples} samples per period")]
    UnresolvableFrequency { index: i64, samples: usize },
    #[error("slice index {index} out of range for axis of length {len}")]
    SliceOutOfRange { index: usize, len: usize },
    #[error("zero matrix has no operator norm to normalize by")]
    ZeroMatrix,
    #[error("non-finite value at iteration {iteration}, row {row}")]
    NonFinite { iteration: usize, row: usize },
    #[error("rank {k} out of range 1..={max}")]
    RankOutOfRange { k: usize, max: usize },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("decomposition failed: {0}")]
    Decomposition(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
