use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(String),
    #[error("invalid field `{field}`: {reason}")]
    Invariant { field: &'static str, reason: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("data: {0}")]
    Data(String),
    #[error("non-finite loss term `{0}`")]
    NonFinite(&'static str),
    #[error("pose sampling failed after {0} attempts")]
    PoseSampling(usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("image: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn invariant(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Invariant {
            field,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
