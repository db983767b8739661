use thiserror::Error;

use crate::config::ConfigError;
use crate::floors::FloorError;
use crate::logio::LogError;
use crate::stride::StrideError;
use crate::synth::SynthError;

/// Crate-wide error type; each stage has its own error enum that converts
/// into this one.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Stride(#[from] StrideError),
    #[error(transparent)]
    Floor(#[from] FloorError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("no parsable sensor log in {0}")]
    NoInput(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
