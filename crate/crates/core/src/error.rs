use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the analysis toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimensions {width}x{height}: {reason}")]
    InvalidDimensions {
        width: usize,
        height: usize,
        reason: &'static str,
    },

    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimensionMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("non-finite value at pixel index {index}")]
    NonFinite { index: usize },

    #[error("value {value} at pixel index {index} is outside [0, 1]; save it as a quantized field instead")]
    OutOfRange { index: usize, value: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("malformed {format} data: {reason}")]
    Format {
        format: &'static str,
        reason: String,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("insufficient rating candidates: {}", format_shortfall(.0))]
    Shortfall(Vec<(String, usize, usize)>),

    #[error("unknown item id `{0}`")]
    UnknownItem(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

fn format_shortfall(items: &[(String, usize, usize)]) -> String {
    items
        .iter()
        .map(|(cat, want, have)| format!("{cat} (requested {want}, available {have})"))
        .collect::<Vec<_>>()
        .join(", ")
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
