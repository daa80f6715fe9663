use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the toolkit reports.
///
/// Variants fall into two families: validation failures (bad inputs, broken
/// invariants, malformed files) and I/O failures. The CLI maps the first
/// family to exit code 1 and the second to exit code 2, see [`Error::is_io`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: String, found: String },

    #[error("degenerate vector: {0}")]
    DegenerateVector(String),

    #[error("empty grid")]
    EmptyGrid,

    #[error("invalid name: {0:?}")]
    InvalidName(String),

    #[error("unknown category: {0}")]
    UnknownCategory(String),

    #[error("invalid taxonomy: {0}")]
    InvalidTaxonomy(String),

    #[error("corrupt RLE: {0}")]
    CorruptRle(String),

    #[error("empty mask")]
    EmptyMask,

    #[error("invalid polygon: {0}")]
    InvalidPolygon(String),

    #[error("empty gallery")]
    EmptyGallery,

    #[error("no detector predictions supplied for base image {0}")]
    MissingPredictions(u64),

    #[error("no proposals to align")]
    NoProposal,

    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),

    #[error("vocabulary mismatch: {0}")]
    Vocabulary(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("truncated file: {0}")]
    TruncatedFile(String),

    #[error("corrupt data: {0}")]
    CorruptData(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse error in {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(expected: impl ToString, found: impl ToString) -> Self {
        Error::Dimension {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the filesystem rather than of the data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
