use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed record: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate instance id {0:?}")]
    DuplicateId(String),

    #[error("truth record for id {0:?} has no matching instance")]
    OrphanTruth(String),

    #[error("label {label} of instance {id:?} is outside [0, 1]")]
    LabelOutOfRange { id: String, label: f64 },

    #[error("split of {total} instances at fraction {fraction} leaves an empty side")]
    EmptySplit { total: usize, fraction: f64 },

    #[error("active feature set is empty")]
    EmptyActiveSet,

    #[error("labels contain a non-finite value at row {0}")]
    NonFiniteLabel(usize),

    #[error("dimension mismatch: {what} (expected {expected}, found {found})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("run {run_id} failed at step {step}: {source}")]
    RunFailed {
        run_id: usize,
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("fraction {0} selects no features")]
    EmptySubset(f64),

    #[error("evaluation of the {fraction} subset failed: {source}")]
    SubsetFailed {
        fraction: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("vocabulary hash mismatch: model expects {expected}, found {found}")]
    VocabularyMismatch { expected: String, found: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid file format: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
