use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("dataset is empty: {0}")]
    EmptyDataset(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("user {user} has {len} interactions, fewer than the required {min}")]
    ShortHistory { user: usize, len: usize, min: usize },

    #[error("matrix is not positive semi-definite (pivot {pivot} = {value})")]
    NotPositiveSemiDefinite { pivot: usize, value: f64 },

    #[error("candidate set is empty")]
    EmptyCandidates,

    #[error("user {user}: {steps} steps per round but only {available} unseen items")]
    InsufficientCatalog {
        user: usize,
        steps: usize,
        available: usize,
    },

    #[error("graph has no nodes")]
    EmptyGraph,

    #[error("unknown category {0:?}")]
    UnknownCategory(String),

    #[error("stratum resampling gave up for user {user} after {retries} retries")]
    StratumResampling { user: usize, retries: usize },

    #[error("no completed runs in {0}")]
    NoCompletedRuns(PathBuf),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}

pub(crate) trait IoContext<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|source| Error::Io {
            context: what(),
            source,
        })
    }
}
