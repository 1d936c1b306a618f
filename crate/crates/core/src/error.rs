use std::path::PathBuf;

use thiserror::Error;
use vti_tensor::TensorError;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{0}")]
    Contract(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {detail}")]
    Parse { path: PathBuf, line: usize, detail: String },
    #[error("checkpoint format error at byte {offset}: {detail}")]
    Format { offset: usize, detail: String },
    #[error("checkpoint does not match the model: {0}")]
    Mismatch(String),
    #[error("unknown {kind} {name:?}; known: {}", known.join(", "))]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        known: Vec<String>,
    },
    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(String),
    #[error("config: {0}")]
    Config(String),
}

impl CoreError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn is_io(&self) -> bool {
        matches!(self, CoreError::Io { .. })
    }
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

pub(crate) fn contract(detail: impl Into<String>) -> CoreError {
    CoreError::Contract(detail.into())
}
