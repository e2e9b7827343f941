use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("unknown image id `{0}`")]
    UnknownId(String),

    #[error("invalid world: {0}")]
    World(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("mining error: {0}")]
    Mining(String),

    #[error("init error: {0}")]
    Init(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("training diverged at k={k} t={t} epoch={epoch} batch={batch}: {message}")]
    Divergence {
        k: usize,
        t: usize,
        epoch: usize,
        batch: usize,
        message: String,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }
}
