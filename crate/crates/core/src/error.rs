use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::dataset::ValidationReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{path}: malformed document at `{key_path}`: {message}")]
    Malformed {
        path: PathBuf,
        key_path: String,
        message: String,
    },

    #[error("dataset failed validation: {0}")]
    Invalid(ValidationReport),

    #[error("{path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("box ({x}, {y}, {w}, {h}) lies entirely outside the {width}x{height} image")]
    OutOfBounds {
        x: f64,
        y: f64,
        w: f64,
        h: f64,
        width: u32,
        height: u32,
    },

    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (u32, u32),
        found: (u32, u32),
    },

    #[error("blend weights at pixel ({x}, {y}) sum to {sum}, expected 1")]
    WeightSum { x: u32, y: u32, sum: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Coarse failure class, used by the CLI to choose an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Data,
    Io,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. } => ErrorKind::Io,
            _ => ErrorKind::Data,
        }
    }
}
