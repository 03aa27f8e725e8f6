use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed audio file {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("unsupported audio encoding in {path}: {message}")]
    Unsupported { path: PathBuf, message: String },

    #[error("invalid sample rate {0} Hz (expected 8000..=192000)")]
    InvalidSampleRate(u32),

    #[error("non-finite sample at index {0}")]
    NonFinite(usize),

    #[error("validation error in `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("signal too short: {0}")]
    TooShort(String),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("silent reference signal (energy {0:e}); use PES instead")]
    SilentReference(f64),

    #[error("mixture planning failed: {0}")]
    Planning(String),

    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
