use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the analytics pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: array `{field}` has {found} entries, expected {expected}")]
    LengthMismatch {
        line: usize,
        field: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("line {line}: unknown power name {value:?}")]
    UnknownPower { line: usize, value: String },

    #[error("line {line}: {message}")]
    Record { line: usize, message: String },

    #[error("line {line}: malformed record: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("config error in field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("perfectly collinear columns: {0:?}")]
    Collinear(Vec<String>),

    #[error("class {class} has {count} members, fewer than k = {k}")]
    ClassTooSmall { class: u8, count: usize, k: usize },

    #[error("training data contains a single class")]
    SingleClass,

    #[error("missing input file {}", .0.display())]
    MissingInput(PathBuf),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    SerdeJson(#[from] serde_json::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: msg.into(),
        }
    }

    /// Process exit status for this error: 2 config, 3 input, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 2,
            Error::Numerical(_) | Error::Collinear(_) => 4,
            _ => 3,
        }
    }
}
