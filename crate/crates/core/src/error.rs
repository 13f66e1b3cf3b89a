use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("duplicate id `{0}` in knowledge base")]
    DuplicateId(String),

    #[error("relation {src} -[{kind}]-> {dst}: unknown endpoint `{missing}`")]
    DanglingRelation {
        src: String,
        dst: String,
        kind: String,
        missing: String,
    },

    #[error("invalid record {record}: {message}")]
    InvalidRecord { record: String, message: String },

    #[error("unknown candidate id `{0}`")]
    UnknownCandidate(String),

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}: parameter norms {norms}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        norms: String,
    },

    #[error("gradient check failed: {0}")]
    GradientCheck(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.to_string(),
        }
    }

    /// True for errors caused by bad user input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::Io { .. } | Error::NonFiniteLoss { .. } | Error::GradientCheck(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
