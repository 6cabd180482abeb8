use std::io;

use thiserror::Error;

/// Errors produced by the simulation, inversion and analysis stages.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("grid too coarse: {points_per_wavelength:.3} points per wavelength (minimum 2)")]
    Unresolvable { points_per_wavelength: f64 },

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("internal consistency check failed: {0}")]
    Consistency(String),

    #[error("undefined contrast: {0}")]
    UndefinedContrast(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },

    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
