use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Parse { path: PathBuf, msg: String },
    #[error("subject `{subject}`: {reason}")]
    InvalidMatrix { subject: String, reason: String },
    #[error("subject `{subject}`: matrix has k={found}, dataset has k={expected}")]
    MixedK {
        subject: String,
        expected: usize,
        found: usize,
    },
    #[error("edge vector has length {actual}, expected {expected}")]
    EdgeLength { expected: usize, actual: usize },
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error("not enough subjects: {0}")]
    TooFewSubjects(String),
    #[error("parcel {0} has no network assignment")]
    UnmappedParcel(usize),
    #[error("subject `{0}` is not in the dataset")]
    UnknownSubject(String),
}

impl DataError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, msg: impl ToString) -> Self {
        Self::Parse {
            path: path.into(),
            msg: msg.to_string(),
        }
    }
}
