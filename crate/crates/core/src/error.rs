// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument outside the domain of a model function.
    #[error("domain error: {0}")]
    Domain(String),

    /// Calibration could not identify the model constants.
    #[error("calibration error: {0}")]
    Calibration(String),

    /// The requested trap time would be negative.
    #[error("infeasible compensation: {0}")]
    InfeasibleCompensation(String),

    /// Request outside the regime where the device model is valid.
    #[error("model validity: {0}")]
    ModelValidity(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("{path}: parse error at byte {offset}: {message}")]
    Parse {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("{path}: {source}")]
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
