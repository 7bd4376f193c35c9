use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Record {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("bibtex: {0}")]
    Bibtex(String),

    #[error("missing required field `{0}`")]
    MissingField(&'static str),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("encoding: {0}")]
    Encoding(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("degenerate venue: {k} venue tokens, need at least {min}")]
    DegenerateVenue { k: usize, min: usize },

    #[error("non-finite value in citation {index}")]
    NonFinite { index: usize },

    #[error("training diverged at epoch {epoch}")]
    DivergedEpoch { epoch: usize },

    #[error("pre-training diverged at step {step}")]
    DivergedStep { step: usize },

    #[error("model file: {0}")]
    ModelFile(String),

    #[error("vocabulary hash mismatch: model expects {expected}, got {found}")]
    VocabMismatch { expected: String, found: String },

    #[error("selector untrainable: no positive anchor examples")]
    NoPositives,

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }
}
