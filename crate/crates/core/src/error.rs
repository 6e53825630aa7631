use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("empty sequence: {0}")]
    EmptySequence(&'static str),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("fixed-point encoding overflow: |{value}| >= 2^{bits}")]
    Encoding { value: f64, bits: u32 },
    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("participant {0} dropped out; round aborted")]
    Dropout(usize),
    #[error("no representation for news id {0}")]
    MissingRepr(String),
    #[error("server consistency error: {0}")]
    Consistency(String),
    #[error("cold-start user {0} has no history")]
    ColdStart(String),
    #[error("format error at row {row}: {msg}")]
    Format { row: usize, msg: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}
