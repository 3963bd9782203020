use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the matcher.
#[derive(Debug, Error)]
pub enum FapsmError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("unknown label {0}: not a gallery identity")]
    UnknownLabel(i64),

    #[error("invalid signature: {0}")]
    InvalidSignature(String),

    #[error("invalid gallery: {0}")]
    InvalidGallery(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("zero vector in cosine score")]
    ZeroVector,

    #[error("incomparable pair: no mutually non-occluded patch")]
    IncomparablePair,

    #[error("missing truth labels")]
    MissingLabels,

    #[error("no candidates: every patch rejected and no baseline vote")]
    NoCandidates,

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("linear solve failed: {0}")]
    SolveFailed(String),

    #[error("weight learning did not converge after {sweeps} sweeps (residual {residual:e})")]
    NotConverged { sweeps: usize, residual: f64 },

    #[error("all patch weights shrank to zero (lambda2 = {lambda2})")]
    AllWeightsZero { lambda2: f64 },

    #[error("degenerate statistic: {0}")]
    Degenerate(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("unsupported format: {0}")]
    Format(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<FapsmError>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, FapsmError>;

/// Process exit status class of an error.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitClass {
    Validation = 1,
    Io = 2,
    Numerical = 3,
}

impl FapsmError {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        FapsmError::Parse { line, msg: msg.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FapsmError::Io { path: path.into(), source }
    }

    /// Wraps an error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        FapsmError::Stage { stage, source: Box::new(self) }
    }

    pub fn exit_class(&self) -> ExitClass {
        match self {
            FapsmError::Io { .. } => ExitClass::Io,
            FapsmError::NonFinite(_)
            | FapsmError::SolveFailed(_)
            | FapsmError::NotConverged { .. }
            | FapsmError::AllWeightsZero { .. }
            | FapsmError::Degenerate(_) => ExitClass::Numerical,
            FapsmError::Stage { source, .. } => source.exit_class(),
            _ => ExitClass::Validation,
        }
    }
}
