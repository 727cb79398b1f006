use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate paper id `{0}`")]
    DuplicatePaper(String),

    #[error("unknown aspect `{0}`")]
    UnknownAspect(String),

    #[error("unknown paper `{0}`")]
    UnknownPaper(String),

    #[error("row `{id}` has dimension {found}, expected {expected}")]
    DimensionMismatch {
        id: String,
        expected: usize,
        found: usize,
    },

    #[error("row `{0}` contains a non-finite component")]
    NonFinite(String),

    #[error("row `{0}` has zero norm")]
    ZeroVector(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("requested {requested} negative pairs but only {available} are available")]
    InsufficientNegatives { requested: usize, available: usize },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }

    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}
