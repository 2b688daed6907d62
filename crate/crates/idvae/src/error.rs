//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    Shape { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },

    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("non-finite {what} at step {step} (phase {phase})")]
    NonFinite { what: String, phase: String, step: u64 },

    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl Error {
    pub fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Invalid { op, msg: msg.into() }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code for the CLI: 2 config, 3 data/io, 4 numeric/internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Io { .. } => 3,
            Error::Shape { .. }
            | Error::Invalid { .. }
            | Error::NonFinite { .. }
            | Error::Numeric(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
