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
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("events row {row}: unknown column `{column}`")]
    UnknownColumn { row: usize, column: String },
    #[error("events row {row}: value `{value}` is not in the vocabulary of column `{column}`")]
    OutOfVocab {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}: non-finite value for `{column}`")]
    NonFinite { row: usize, column: String },
    #[error("user `{0}` has events but no score")]
    MissingScore(String),
    #[error("invalid dataset: {0}")]
    Dataset(String),
    #[error("infeasible split: {0}")]
    InfeasibleSplit(String),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("parse error at position {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("no valid statistic remains to be generated")]
    Exhausted,
    #[error("AUC needs both classes present")]
    SingleClass,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown fixture `{0}`")]
    UnknownFixture(String),
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
