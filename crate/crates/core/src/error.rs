use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("unsupported maxval {0} (only 255 is accepted)")]
    UnsupportedMaxval(u32),

    #[error("unsupported variant: {0}")]
    UnsupportedVariant(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("weight format error: {0}")]
    WeightFormat(String),

    #[error("no valid pixels to evaluate")]
    EmptySupport,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("png encoding: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn format(offset: usize, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }

    pub(crate) fn param(message: impl Into<String>) -> Self {
        Error::Parameter(message.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
