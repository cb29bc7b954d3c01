//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("annotation error: {0}")]
    Annotation(String),
    #[error("classifier error: {0}")]
    Classifier(String),
    #[error("selection error: {0}")]
    Selection(String),
    #[error("label queue error: {0}")]
    Queue(String),
    #[error("model error: {0}")]
    Model(String),
    #[error("evaluation error: {0}")]
    Eval(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code: config problems are distinguished from runtime
    /// invariant violations.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            _ => 3,
        }
    }
}
