//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },

    #[error("duplicate document id \"{0}\"")]
    DuplicateId(String),

    #[error("corpus file {0} contains no records")]
    EmptyCorpus(PathBuf),

    #[error("document \"{id}\" is invalid: {reason}")]
    InvalidDocument { id: String, reason: String },

    #[error("document id \"{0}\" collides with an existing document")]
    IdCollision(String),

    #[error("embedder \"{expected}\" required but \"{got}\" supplied")]
    EmbedderMismatch { expected: String, got: String },

    #[error("document has no tokens")]
    EmptyDocument,

    #[error("token log-probability list is empty")]
    EmptyLogprobs,

    #[error("backend returned no token log-probabilities; feature extraction refused")]
    LogprobsUnavailable,

    #[error("misaligned inputs: {items} items but {values} values")]
    MisalignedInputs { items: usize, values: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("training samples contain only the \"{0}\" class")]
    SingleClassTraining(String),

    #[error("training needs at least {min} samples, got {got}")]
    TooFewSamples { min: usize, got: usize },

    #[error("model file line {line}: {reason}")]
    ModelFormat { line: usize, reason: String },

    #[error("document \"{0}\" carries an unknown provenance label")]
    UnknownLabel(String),

    #[error("credential environment variable \"{0}\" is not set")]
    MissingCredential(String),

    #[error("endpoint error: {0}")]
    Endpoint(String),

    #[error("experiment aborted: {reason}")]
    ExperimentAborted {
        reason: String,
        partial: Box<crate::eval::MetricsReport>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}
