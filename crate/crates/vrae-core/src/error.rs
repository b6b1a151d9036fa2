//! Error type shared by the whole crate.

use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug)]
pub enum Error {
    /// A tensor dimension did not match what an operation requires. The
    /// message names the offending dimension.
    Shape(String),
    /// A configuration value is out of its valid range.
    Config(String),
    /// An input collection was empty where at least one element is needed.
    Empty(String),
    /// A numeric invariant was violated at runtime (NaN/Inf loss, ...).
    Numeric(String),
    /// A serialized artifact (checkpoint, CSV, manifest) is malformed.
    Format(String),
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(msg) => write!(f, "shape mismatch: {msg}"),
            Error::Config(msg) => write!(f, "invalid configuration: {msg}"),
            Error::Empty(msg) => write!(f, "empty input: {msg}"),
            Error::Numeric(msg) => write!(f, "numeric failure: {msg}"),
            Error::Format(msg) => write!(f, "malformed data: {msg}"),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(format!("json: {e}"))
    }
}
