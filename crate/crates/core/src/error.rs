//! Crate-wide error type.
//!
//! Variants are grouped by how callers react to them: I/O and encoding
//! problems, query syntax errors (with position), schema/config violations,
//! and numeric failures. The CLI maps these groups onto exit codes.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed input in {path}: {message}")]
    Format { path: String, message: String },

    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("schema violation: {0}")]
    Schema(String),

    #[error("unknown entity: {0}")]
    UnknownEntity(String),

    #[error("unknown token: {0}")]
    UnknownToken(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value produced in {0}")]
    NonFinite(String),

    #[error("{0}")]
    Other(String),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
