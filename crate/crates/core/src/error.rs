use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {container} file: bad {field} ({detail})")]
    Format {
        container: &'static str,
        field: &'static str,
        detail: String,
    },

    #[error("payload length mismatch: header implies {expected} values, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("degenerate ROI: the region mask has no foreground voxels")]
    DegenerateRoi,

    #[error("lesion placement failed: {0}")]
    Placement(String),

    #[error("training diverged: non-finite loss at epoch {epoch}, sample {sample}")]
    NonFiniteLoss { epoch: usize, sample: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("index out of bounds: {0}")]
    Index(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
