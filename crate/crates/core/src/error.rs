use thiserror::Error;

/// Errors raised by the numerics, corpus, model and training layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("line {line}: {message}")]
    Decode { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
