use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] latentsp_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    /// Malformed document; `pointer` names the offending key.
    #[error("{}: {pointer}: {message}", path.display())]
    Schema { path: PathBuf, pointer: String, message: String },
    #[error("{}: format version {found} is not supported (expected {expected}); {hint}", path.display())]
    Version { path: PathBuf, found: u32, expected: u32, hint: &'static str },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn schema(path: impl Into<PathBuf>, pointer: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema { path: path.into(), pointer: pointer.into(), message: message.into() }
    }
}
