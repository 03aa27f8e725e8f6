use std::fmt;

use serde::Serialize;
use stemkit_core::Error as CoreError;
use stemkit_model::ModelError;
use stemkit_neural::NeuralError;

/// Bad arguments, configs or inputs.
pub const EXIT_USAGE: i32 = 2;
/// Failures while doing valid work (I/O, corrupt files).
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Clone, Serialize)]
pub struct CliError {
    pub code: i32,
    pub kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    pub message: String,
}

impl CliError {
    pub fn usage(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            kind: "validation",
            field: Some(field.into()),
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_RUNTIME,
            kind: "runtime",
            field: None,
            message: message.into(),
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::json!({ "error": self }).to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.field {
            Some(field) => write!(f, "{field}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let message = e.to_string();
        match e {
            CoreError::Validation { field, message } => CliError::usage(field, message),
            CoreError::InvalidSampleRate(_) => CliError::usage("sample_rate", message),
            CoreError::LengthMismatch(_) => CliError::usage("length", message),
            CoreError::TooShort(_) => CliError::usage("length", message),
            CoreError::SilentReference(_) => CliError::usage("references", message),
            CoreError::NonFinite(_) => CliError::usage("samples", message),
            CoreError::Json { path, .. } => CliError::usage(path.display().to_string(), message),
            CoreError::Io { .. } | CoreError::Format { .. } | CoreError::Unsupported { .. } | CoreError::Planning(_) => {
                CliError::runtime(message)
            }
        }
    }
}

impl From<NeuralError> for CliError {
    fn from(e: NeuralError) -> Self {
        CliError::runtime(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Core(e) => e.into(),
            ModelError::Neural(e) => e.into(),
            ModelError::Config { field, message } => CliError::usage(field, message),
            ModelError::EmptyDataset => CliError::usage("data", "no training chunks found"),
            ModelError::Checkpoint(m) => CliError::runtime(format!("checkpoint: {m}")),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::runtime(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
