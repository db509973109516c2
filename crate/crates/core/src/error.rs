use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("index {index} out of range for {what} of length {len}")]
    Index {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("record {record}: invalid {field}: {msg}")]
    Validation { record: String, field: String, msg: String },

    #[error("{path}: bad format: {msg}")]
    Format { path: String, msg: String },

    #[error("{path}: truncated raster: expected {expected} bytes, found {found}")]
    Length {
        path: String,
        expected: usize,
        found: usize,
    },

    #[error("degenerate box {0:?}: covers no pixels")]
    DegenerateBox([f64; 4]),

    #[error("token {token:?} not in embedding table")]
    Oov { token: String },

    #[error("token {0:?} has no representable characters")]
    Unrepresentable(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        Error::Shape { op, left, right }
    }
}
