use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("layout mismatch: expected {expected}, found {found}")]
    LayoutMismatch { expected: String, found: String },

    #[error("budget too small: {0}")]
    Budget(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("parse error at {position}: {message}")]
    Parse { position: String, message: String },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn spec(msg: impl Into<String>) -> Self {
        Error::InvalidSpec(msg.into())
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn parse(position: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            position: position.into(),
            message: message.to_string(),
        }
    }

    pub(crate) fn from_json(position: impl Into<String>, err: serde_json::Error) -> Self {
        let position = format!("{} (line {}, column {})", position.into(), err.line(), err.column());
        Error::parse(position, err)
    }
}
