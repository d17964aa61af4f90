use std::time::Duration;

use thiserror::Error;

use crate::types::{InputType, ModelName};

/// Errors raised by the serving core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unknown application `{0}`")]
    UnknownApp(String),
    #[error("input type mismatch: application expects {expected}, got {actual}")]
    InputTypeMismatch { expected: InputType, actual: InputType },
    #[error("malformed input: {0}")]
    MalformedInput(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no connected replica for model `{0}`")]
    ModelUnavailable(ModelName),
    #[error("replica timed out after {0:?}")]
    ReplicaTimeout(Duration),
    #[error("connection closed")]
    ConnectionClosed,
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("feedback queue full, retry later")]
    QueueFull,
    #[error("config error: {0}")]
    Config(String),
    #[error("state store error: {0}")]
    Store(String),
    #[error("container error: {0}")]
    Container(String),
}

impl Error {
    /// Whether a client may retry the same request unchanged.
    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::QueueFull | Error::ModelUnavailable(_) | Error::ReplicaTimeout(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
