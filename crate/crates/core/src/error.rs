use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors surfaced by every module of the crate.
///
/// The `category` of each variant is a short stable token that the CLI prints
/// as the machine-parsable prefix of its single-line error message.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("audio {path}: {reason}")]
    Audio { path: PathBuf, reason: String },

    #[error("invalid audio: {0}")]
    InvalidAudio(String),

    #[error("mixing: {0}")]
    Mixing(String),

    #[error("simulation: {0}")]
    Simulation(String),

    #[error("manifest {path}:{line}: {reason}")]
    Manifest {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("features: {0}")]
    Features(String),

    #[error("config: {0}")]
    Config(String),

    #[error("vocabulary: {0}")]
    Vocabulary(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("training: {0}")]
    Training(String),

    #[error("inference: {0}")]
    Inference(String),

    #[error("evaluation: {0}")]
    Eval(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable category token for this error.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Shape { .. } | Error::NonScalarLoss(_) | Error::UnknownParam(_) => "shape",
            Error::Audio { .. } | Error::InvalidAudio(_) => "audio",
            Error::Mixing(_) | Error::Simulation(_) => "simulation",
            Error::Manifest { .. } => "manifest",
            Error::Features(_) => "features",
            Error::Config(_) => "config",
            Error::Vocabulary(_) => "vocabulary",
            Error::Checkpoint(_) => "checkpoint",
            Error::Training(_) => "training",
            Error::Inference(_) => "inference",
            Error::Eval(_) => "eval",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}
