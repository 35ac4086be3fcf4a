use std::path::PathBuf;

use thiserror::Error;

/// Every failure the pipeline can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("inconsistent data: {0}")]
    Consistency(String),

    #[error("{path}: not a CSEG tensor ({reason})")]
    Format { path: PathBuf, reason: String },

    #[error("{path}: corrupt tensor: {reason}")]
    Corruption { path: PathBuf, reason: String },

    #[error("{path}: unsupported tensor version or dtype: {reason}")]
    Version { path: PathBuf, reason: String },

    #[error("dataset/budget incompatible: {0}")]
    Budget(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    /// Process exit code: 2 argument, 3 data/consistency, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Argument(_) => 2,
            Error::Numeric(_) => 4,
            Error::Consistency(_)
            | Error::Format { .. }
            | Error::Corruption { .. }
            | Error::Version { .. }
            | Error::Budget(_)
            | Error::Contract(_)
            | Error::Io { .. }
            | Error::Json { .. } => 3,
        }
    }
}

macro_rules! arg_err {
    ($($t:tt)*) => { $crate::error::Error::Argument(format!($($t)*)) };
}
pub(crate) use arg_err;
