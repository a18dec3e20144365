use thiserror::Error;

/// Errors raised across the learning pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unsupported primitive `{0}`")]
    UnsupportedPrimitive(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("index {index} out of range (limit {limit}) for {what}")]
    OutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },
    #[error("action component {0} is outside [-1, 1]")]
    ActionOutOfBounds(f64),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("incomplete data: {0}")]
    Incomplete(String),
    #[error("stage `{stage}` failed on task {task}: {source}")]
    Stage {
        stage: &'static str,
        task: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("ordering violation: {0}")]
    Ordering(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(Error::Shape {
        op,
        detail: detail.into(),
    })
}
