use std::path::PathBuf;

/// Error type shared across the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {got} ({context})")]
    Shape {
        expected: String,
        got: String,
        context: String,
    },
    #[error("unknown group id {0}")]
    UnknownGroup(usize),
    #[error("duplicate group id {0}")]
    DuplicateGroup(usize),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("dataset error at {path}: {message}")]
    Dataset { path: PathBuf, message: String },
    #[error("non-finite loss at step {step}: {component} = {value}")]
    NonFiniteLoss {
        step: usize,
        component: String,
        value: f64,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error("refusing to overwrite {0} (pass --force)")]
    WouldOverwrite(PathBuf),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(expected: impl ToString, got: impl ToString, context: impl ToString) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            got: got.to_string(),
            context: context.to_string(),
        }
    }
}
