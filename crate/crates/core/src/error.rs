use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("pgm: {reason} (at byte {offset})")]
    Pgm { offset: usize, reason: String },

    #[error("mask raster holds value {value} at pixel {index}; expected 0 or 255")]
    MaskValue { index: usize, value: u8 },

    #[error("{0}")]
    Invalid(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("unknown image id `{0}`")]
    UnknownId(String),

    #[error("threshold {0} is not in the threshold set")]
    ThresholdNotInSet(u8),

    #[error("non-finite gradient in layer `{layer}`")]
    NonFiniteGradient { layer: String },

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },

    #[error("weights file: {0}")]
    Weights(String),

    #[error("weights file: expected {expected} floats, found {actual}")]
    FloatCount { expected: usize, actual: usize },

    #[error("blob placement failed after {attempts} attempts in image {image}; use fewer or smaller blobs")]
    Placement { image: usize, attempts: usize },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn pgm(offset: usize, reason: impl Into<String>) -> Self {
        Error::Pgm {
            offset,
            reason: reason.into(),
        }
    }
}
