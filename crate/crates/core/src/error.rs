use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("loss is not a scalar (shape {0:?})")]
    NotScalar(Vec<usize>),

    #[error("variable {0} does not belong to this tape")]
    ForeignVar(usize),

    #[error("token id {id} out of range for vocabulary of size {size}")]
    IdOutOfRange { id: usize, size: usize },

    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),

    #[error("malformed {what} at line {line}: {detail}")]
    Malformed {
        what: &'static str,
        line: usize,
        detail: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(Error::Shape {
        op,
        detail: detail.into(),
    })
}
