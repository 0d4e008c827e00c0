use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, QeError>;

#[derive(Debug, Error)]
pub enum QeError {
    #[error("empty translation")]
    EmptyTranslation,

    #[error("invalid span {start}:{end} for text of {len} characters")]
    SpanOutOfBounds { start: usize, end: usize, len: usize },

    #[error("overlapping or unsorted spans: {0}")]
    OverlappingSpans(String),

    #[error("{path}: line {line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },

    #[error("record {id}: {message}")]
    Validation { id: String, message: String },

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("{0}")]
    EmptyInput(&'static str),

    #[error("misaligned inputs: {0}")]
    Misaligned(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(&'static str),

    #[error("invalid thresholds: epsilon_major {major} > epsilon_minor {minor}")]
    InvalidThresholds { minor: f64, major: f64 },

    #[error("sampler protocol error: {0}")]
    SamplerProtocol(String),

    #[error("sampler terminated{0}")]
    SamplerTerminated(String),

    #[error("sampler timed out after {0:?}")]
    SamplerTimeout(std::time::Duration),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("io error: {0}")]
    RawIo(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl QeError {
    pub fn validation(id: impl Into<String>, message: impl Into<String>) -> Self {
        QeError::Validation { id: id.into(), message: message.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        QeError::Io { path: path.into(), source }
    }

    /// Errors caused by the user's inputs, as opposed to failures while running.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            QeError::SamplerProtocol(_)
                | QeError::SamplerTerminated(_)
                | QeError::SamplerTimeout(_)
                | QeError::Divergence(_)
                | QeError::RawIo(_)
        )
    }
}
