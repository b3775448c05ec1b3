use thiserror::Error;

use crate::llm_client::ClientError;
use crate::prompts::ParseFailure;
use crate::types::TaskKind;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty sample")]
    EmptySample,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("sample kind mismatch: expected {expected}, found {found}")]
    KindMismatch { expected: TaskKind, found: TaskKind },

    #[error("ensemble too small to filter: {0} paths")]
    EnsembleTooSmall(usize),

    #[error("too few replicates for the requested level: K = {0}")]
    TooFewReplicates(usize),

    #[error("ensemble generation failed: {failed} of {requested} paths failed")]
    EnsembleFailed { failed: usize, requested: usize },

    #[error("metadata mismatch: {0}")]
    MetadataMismatch(String),

    #[error(transparent)]
    Parse(#[from] ParseFailure),

    #[error(transparent)]
    PathGeneration(#[from] PathGenerationError),

    #[error(transparent)]
    Client(#[from] ClientError),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// A sample path that could not be completed. Carries whatever was produced
/// before the failure so it can be inspected or persisted.
#[derive(Debug, Clone, Error)]
#[error("path generation failed after {} samples: {reason}", partial.len())]
pub struct PathGenerationError {
    pub reason: String,
    pub partial: Vec<crate::types::Sample>,
    pub raw_text: String,
}

impl PathGenerationError {
    pub fn new(reason: impl Into<String>) -> Self {
        Self {
            reason: reason.into(),
            partial: Vec::new(),
            raw_text: String::new(),
        }
    }
}
