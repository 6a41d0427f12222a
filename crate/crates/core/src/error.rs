use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{kind} index {index} out of range (size {size})")]
    IndexOutOfRange {
        kind: &'static str,
        index: usize,
        size: usize,
    },

    #[error("interaction graph has no edges")]
    EmptyGraph,

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("dataset file {0} contains no interactions")]
    EmptyFile(PathBuf),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("every candidate item is excluded; nothing to rank")]
    AllExcluded,

    #[error("every rating is masked; mean is undefined")]
    AllMasked,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("user {user} has no negative items available (needs {needed}, has {available})")]
    NoNegativesAvailable {
        user: usize,
        needed: usize,
        available: usize,
    },

    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    DivergenceDetected {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("no users to evaluate")]
    NoUsers,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("checkpoint checksum mismatch (stored {stored:#018x}, computed {computed:#018x})")]
    ChecksumMismatch { stored: u64, computed: u64 },

    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by numerical breakdown rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::DivergenceDetected { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
