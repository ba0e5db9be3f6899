use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A specification or configuration value is out of its valid range.
    #[error("configuration error: {0}")]
    Config(String),

    /// An input tensor, batch or dataset does not satisfy an operation's contract.
    #[error("input error: {0}")]
    Input(String),

    /// A computation produced NaN or infinity.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A training loop diverged.
    #[error("training diverged at step {step}: {reason}")]
    Training { step: usize, reason: String },

    /// A persisted artifact failed validation on load.
    #[error("integrity error in `{field}`: {reason}")]
    Integrity { field: String, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn integrity(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Integrity {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

macro_rules! ensure {
    ($cond:expr, $variant:ident, $($fmt:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::$variant(format!($($fmt)+)));
        }
    };
}
pub(crate) use ensure;
