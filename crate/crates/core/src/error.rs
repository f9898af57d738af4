use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch on {axis}: expected {expected}, got {actual}")]
    Shape {
        axis: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("input too short: {what} has length {actual}, need at least {minimum}")]
    TooShort {
        what: &'static str,
        actual: usize,
        minimum: usize,
    },

    #[error("unknown label {label} (declared categories: 0..{num_classes})")]
    UnknownLabel { label: usize, num_classes: usize },

    #[error("invalid interval [{start}, {end}]: end must exceed start")]
    DegenerateInterval { start: f64, end: f64 },

    #[error("annotation record {record}: {message}")]
    Annotation { record: usize, message: String },

    #[error("feature file, byte offset {offset}: {message}")]
    FeatureFormat { offset: usize, message: String },

    #[error("model file, byte offset {offset}: {message}")]
    ModelFormat { offset: usize, message: String },

    #[error("cannot pack video {video}: {message}")]
    Infeasible { video: usize, message: String },

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
