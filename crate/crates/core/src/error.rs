use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: coordinate out of range (lat {lat}, lon {lon})")]
    CoordinateOutOfRange { line: usize, lat: f64, lon: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("non-finite value produced by {op} (node {node})")]
    NonFinite { op: &'static str, node: usize },

    #[error("training diverged at epoch {epoch}: mean query loss {loss} exceeds {limit}")]
    Divergence { epoch: usize, loss: f64, limit: f64 },

    #[error("run with seed {seed} failed: {source}")]
    Seeded {
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("bad checkpoint: {0}")]
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

    /// Strips `Seeded` wrappers to get at the underlying failure.
    pub fn root(&self) -> &Error {
        match self {
            Error::Seeded { source, .. } => source.root(),
            other => other,
        }
    }
}
