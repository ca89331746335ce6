use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("empty corpus set")]
    EmptyCorpusSet,

    #[error("empty table")]
    EmptyTable,

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("empty gloss")]
    EmptyGloss,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("unknown label {label:?}; valid labels: {valid}")]
    UnknownLabel { label: String, valid: String },

    #[error("invalid template: {0}")]
    Template(String),

    #[error("insufficient examples in {split}: required {required}, available {available}")]
    InsufficientExamples {
        split: String,
        required: usize,
        available: usize,
    },

    #[error("zero variance")]
    ZeroVariance,

    #[error("{0}")]
    Evaluation(String),

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("scorer failed: {0}")]
    Scorer(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl ToString, line: usize, message: impl ToString) -> Self {
        Error::Parse {
            path: path.to_string(),
            line,
            message: message.to_string(),
        }
    }
}
