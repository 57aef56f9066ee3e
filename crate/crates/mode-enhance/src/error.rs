//! Crate-wide error type and exit-code classification.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    /// Invalid configuration (non-COLA window/hop, bad dimensions in a config,
    /// inconsistent hyperparameters).
    #[error("configuration error: {0}")]
    Config(String),

    /// Problems with input data: missing/corrupt files, unsupported WAV
    /// encodings, silent signals, empty corpora.
    #[error("data error: {0}")]
    Data(String),

    /// Shape or dimension mismatch between arrays, models and features.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Malformed or incompatible serialized artifact.
    #[error("format error: {0}")]
    Format(String),

    /// A model/features pair built under different feature configurations.
    #[error("feature config mismatch: {0}")]
    ConfigHashMismatch(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 1 usage, 2 data, 3 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Data(_) | Error::Format(_) | Error::ConfigHashMismatch(_) | Error::Io(_) => 2,
            Error::Dimension(_) => 3,
        }
    }
}
