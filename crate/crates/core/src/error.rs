use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{}:{line}: duplicate id {id:?}", path.display())]
    DuplicateId {
        path: PathBuf,
        line: usize,
        id: String,
    },

    #[error("{}:{line}: record {id:?} has neither \"correct\" nor \"predicted\"", path.display())]
    MissingPredictionField {
        path: PathBuf,
        line: usize,
        id: String,
    },

    #[error("{}:{line}: conflicting predictions for {id:?}", path.display())]
    ConflictingPrediction {
        path: PathBuf,
        line: usize,
        id: String,
    },

    #[error("{count} images lack predictions (first: {})", .ids.join(", "))]
    MissingPredictions { count: usize, ids: Vec<String> },

    #[error("embedding dimension mismatch for {key:?}: expected {expected}, got {found}")]
    DimensionMismatch {
        key: String,
        expected: usize,
        found: usize,
    },

    #[error("embedding {0:?} has zero norm")]
    ZeroNorm(String),

    #[error("no embedding for {0:?}")]
    MissingEmbedding(String),

    #[error("empty class")]
    EmptyClass,

    #[error("records for class {expected:?} include class {found:?}")]
    MixedClasses { expected: String, found: String },

    #[error("unknown tag {0:?}")]
    UnknownTag(String),

    #[error("unknown class {0:?}")]
    UnknownClass(String),

    #[error("empty group")]
    EmptyGroup,

    #[error("empty score list")]
    EmptyScores,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("tag set must contain at least 2 tags, got {0}")]
    TagSetTooSmall(usize),

    #[error("invalid rate {0:?}")]
    InvalidRate(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("infeasible plant spec for class {class:?}: {reason}")]
    InfeasibleSpec { class: String, reason: String },

    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
