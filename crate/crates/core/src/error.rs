use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraftError {
    #[error("{file}:{line}: {msg}")]
    Parse { file: PathBuf, line: usize, msg: String },

    #[error("referential integrity: {0}")]
    Integrity(String),

    #[error("config error: {key}: {msg}")]
    Config { key: String, msg: String },

    #[error("missing dependency: {0}")]
    Dependency(String),

    #[error("numeric fault: {0}")]
    Numeric(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error(transparent)]
    Autodiff(#[from] graftnet_autodiff::AutodiffError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl GraftError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GraftError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        GraftError::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            GraftError::Config { .. } | GraftError::Contract(_) => 2,
            GraftError::Numeric(_) => 4,
            GraftError::Autodiff(graftnet_autodiff::AutodiffError::NonFinite(_)) => 4,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, GraftError>;
