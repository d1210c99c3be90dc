use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("inconsistent counts: {malicious} malicious distributions out of {total} accesses")]
    InconsistentCounts { malicious: u64, total: u64 },

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{path}: unexpected header, expected `{expected}`")]
    Header { path: PathBuf, expected: String },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("dataset has {records} records, need at least {needed}")]
    TooFewRecords { records: usize, needed: usize },

    #[error("parameter layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("normalization mismatch: {0}")]
    Normalization(String),

    #[error("invalid checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
