use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown annotation token {token:?} in {source_name}")]
    UnknownLabel { token: String, source_name: String },

    #[error("channel {channel:?} not found in {path}; available: {available:?}")]
    MissingChannel {
        channel: String,
        path: PathBuf,
        available: Vec<String>,
    },

    #[error("malformed EDF header in {path}: {reason}")]
    BadHeader { path: PathBuf, reason: String },

    #[error("sample count mismatch in {path}: header declares {expected} bytes of records, file holds {actual}")]
    SampleCountMismatch {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("truncated file {path}: expected at least {expected} bytes, found {actual}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("annotation for epoch {epoch_index} ends at sample {end} but the signal has {signal_len} samples")]
    AnnotationPastEnd {
        epoch_index: usize,
        end: usize,
        signal_len: usize,
    },

    #[error("unsupported annotation epoch length {seconds} s in {source_name} (only 30-s epochs are accepted)")]
    EpochDuration { seconds: f64, source_name: String },

    #[error("bad annotation file {source_name}: {reason}")]
    BadAnnotation { source_name: String, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("bad cache file {path}: {reason}")]
    Cache { path: PathBuf, reason: String },

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error("no recordings found in {}", dir.display())]
    NoRecordings { dir: PathBuf },

    #[error("split plan error: {0}")]
    Split(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("fold {fold} failed: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("metrics error: {0}")]
    Metrics(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the input data rather than by training.
    pub fn is_data_error(&self) -> bool {
        !matches!(
            self,
            Error::Training(_) | Error::NonFinite(_) | Error::Config(_) | Error::Fold { .. }
        )
    }
}
