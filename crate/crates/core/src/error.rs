use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the detection toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("input contains no points")]
    EmptyInput,

    #[error("duplicate timestamp {0}")]
    DuplicateTimestamp(i64),

    #[error("irregular granularity: {irregular} of {gaps} gaps deviate from {granularity}s")]
    IrregularGranularity {
        irregular: usize,
        gaps: usize,
        granularity: i64,
    },

    #[error("non-finite value at index {0} cannot be interpolated")]
    NonFiniteValue(usize),

    #[error("series too short: need at least {needed} points, got {got}")]
    SeriesTooShort { needed: usize, got: usize },

    #[error("input too short: need at least {needed} values, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("parameter {value} out of range for {kind}")]
    ParamOutOfRange { kind: &'static str, value: f64 },

    #[error("value {value} out of range [{min}, {max}]")]
    OutOfRange { value: f64, min: f64, max: f64 },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("corrupt bundle: {0}")]
    CorruptBundle(String),

    #[error("corpus needs at least {needed} series, got {got}")]
    TooFew { needed: usize, got: usize },

    #[error("bad corpus spec: {0}")]
    BadSpec(String),

    #[error("unknown detector kind {0:?}")]
    UnknownKind(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
