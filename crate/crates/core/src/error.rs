use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input text; `line` is 1-based and counts the header.
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(
        "line {line}: duplicate record for series `{series_id}` on {event_date} at lead {lead}"
    )]
    Duplicate {
        line: usize,
        series_id: String,
        event_date: String,
        lead: i64,
    },

    #[error("{0}")]
    Domain(String),

    #[error("config key `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("split: {0}")]
    Split(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error("checkpoint array `{name}`: {msg}")]
    Array { name: String, msg: String },

    #[error("checkpoint config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("baseline: {0}")]
    Baseline(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }

    /// Numeric failures are the only errors that map to exit code 3.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric(_))
    }
}
