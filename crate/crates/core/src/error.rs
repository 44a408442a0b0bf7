use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A generated or stored segment could not be parsed into its structured form.
    #[error("malformed {kind} segment: {reason} (text: {text:?})")]
    MalformedSegment {
        kind: &'static str,
        reason: &'static str,
        text: String,
    },

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("no database table for domain `{0}`")]
    UnknownDomain(String),

    #[error("sequence of {len} tokens exceeds the model window of {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("training diverged: non-finite loss at epoch {epoch}, step {step}")]
    DivergedLoss { epoch: usize, step: usize },

    #[error("dialogue {0} has no task goal")]
    MissingGoal(usize),

    #[error("metric input is empty or mismatched: {0}")]
    EmptyInput(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("corpus format error at {path}:{line}: {message}")]
    CorpusFormat {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid database: {0}")]
    DatabaseFormat(String),

    #[error("invalid checkpoint: {0}")]
    CheckpointFormat(String),

    #[error("vocabulary hash mismatch: checkpoint expects {expected}, got {found}")]
    VocabMismatch { expected: String, found: String },

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
}
