use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("negative probability entry {value} at index {index}")]
    NegativeEntry { index: usize, value: f64 },

    #[error("probability vector sums to zero")]
    ZeroSum,

    #[error("probability vector sums to {sum}, expected 1 within {tolerance}")]
    SumMismatch { sum: f64, tolerance: f64 },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("rater {rater_id} has {count} scores, need at least 2")]
    TooFewScores { rater_id: String, count: usize },

    #[error("no non-degenerate rater profile")]
    NoInformativeRater,

    #[error("trajectory does not cover [{from}, {to}] s")]
    InsufficientCoverage { from: f64, to: f64 },

    #[error("fewer than 2 samples ({0})")]
    TooFewSamples(usize),

    #[error("zero variance in {0}: correlation undefined")]
    ZeroVariance(&'static str),

    #[error("unknown NDRT label {0:?}")]
    UnknownNdrt(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid episode {id}: {reason}")]
    InvalidEpisode { id: String, reason: String },

    #[error("missing training target: {0}")]
    MissingTarget(String),

    #[error("need at least 2 distinct subjects, found {0}")]
    SingleSubject(usize),

    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the filesystem rather than of the data.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io { .. } => true,
            Error::Csv(e) => matches!(e.kind(), csv::ErrorKind::Io(_)),
            Error::Json(e) => e.is_io(),
            _ => false,
        }
    }
}
