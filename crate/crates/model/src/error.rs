use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Core(#[from] stemkit_core::Error),

    #[error(transparent)]
    Neural(#[from] stemkit_neural::NeuralError),

    #[error("invalid model config: {field}: {message}")]
    Config { field: String, message: String },

    #[error("training set is empty")]
    EmptyDataset,

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

pub(crate) fn config_err(field: &str, message: impl Into<String>) -> ModelError {
    ModelError::Config {
        field: field.to_string(),
        message: message.into(),
    }
}
