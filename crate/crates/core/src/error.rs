use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the segmentation engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: malformed file: {reason}", path.display())]
    MalformedFile { path: PathBuf, reason: String },

    #[error("{}: non-finite value at element {index}", path.display())]
    NonFiniteValue { path: PathBuf, index: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("{}: label {id} is not in the track registry", path.display())]
    UnknownTrackId { id: u32, path: PathBuf },

    #[error("{}: file not found", path.display())]
    MissingFile { path: PathBuf },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("insufficient data: need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("invalid number of motion groups K={k} for {n} objects")]
    InvalidK { k: usize, n: usize },

    #[error("track sets differ between labelings")]
    TrackSetMismatch,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid scene: {0}")]
    InvalidScene(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn malformed(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::MalformedFile {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Maps `NotFound` onto [`Error::MissingFile`], everything else onto [`Error::Io`].
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile { path }
        } else {
            Error::Io { path, source }
        }
    }
}
