use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad caller input: shape mismatch, out-of-range action, non-finite value.
    #[error("invalid input: {0}")]
    Input(String),

    /// Invalid or inconsistent configuration.
    #[error("config error: {0}")]
    Config(String),

    /// A loss or operation requested from a component that cannot provide it.
    #[error("unsupported: {0}")]
    Capability(String),

    /// A loss graph could not be assembled from the requested pieces.
    #[error("build error: {0}")]
    Build(String),

    /// A solve or optimization produced a residual or value outside tolerance.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
