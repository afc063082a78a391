use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown configuration key `{key}` in section [{section}]")]
    UnknownConfigKey { section: String, key: String },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("channel error: {0}")]
    Channel(String),

    #[error("dataset error: {0}")]
    Data(String),

    #[error("non-binary mask value {value} at index {index}")]
    NonBinary { index: usize, value: f32 },

    #[error("non-finite values: {0}")]
    NonFinite(String),

    #[error("non-finite loss at step {step} (batch ids: {ids:?}): {detail}")]
    NonFiniteLoss {
        step: u64,
        ids: Vec<String>,
        detail: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        Error::Image {
            path: path.into(),
            source,
        }
    }

    /// Usage and configuration problems, as opposed to failures while running.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::UnknownConfigKey { .. })
    }
}
