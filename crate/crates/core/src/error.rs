use thiserror::Error;

/// Errors produced anywhere in the inference stack.
#[derive(Debug, Error)]
pub enum GsiError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("training diverged at epoch {epoch}: {msg}")]
    Training { epoch: usize, msg: String },
    #[error("calibration error: {0}")]
    Calibration(String),
    #[error("metric error: {0}")]
    Metric(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("serialization error: {0}")]
    Serde(String),
}

pub type Result<T> = std::result::Result<T, GsiError>;

impl GsiError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        GsiError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
