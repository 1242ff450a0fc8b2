use std::fmt;
use std::path::PathBuf;

/// A single input row that failed validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RejectedRow {
    /// 1-based line number in the source file (the header is line 1).
    pub line: u64,
    /// Column that caused the rejection, when one can be named.
    pub column: Option<String>,
    pub reason: String,
}

impl fmt::Display for RejectedRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.column {
            Some(col) => write!(f, "line {}, column `{}`: {}", self.line, col, self.reason),
            None => write!(f, "line {}: {}", self.line, self.reason),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed delimited input: {0}")]
    Csv(#[from] csv::Error),

    #[error("header is missing required column `{0}`")]
    MissingColumn(String),

    #[error("{} row(s) rejected; first: {}", .0.len(), .0[0])]
    Rejected(Vec<RejectedRow>),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("cannot compute a mean over an empty set ({0})")]
    EmptyInput(String),

    #[error("feature `{0}` is missing from the input")]
    MissingFeature(String),

    #[error("invalid feature set: {0}")]
    InvalidFeatureSet(String),

    #[error("mean effort {0} is degenerate; it must lie strictly between 0 and 10")]
    DegenerateMeanEffort(f64),

    #[error("effort {0} is outside 0..=10")]
    EffortOutOfRange(f64),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("value iteration did not converge after {iterations} iterations (last residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("need at least two values for a credible interval, got {0}")]
    TooFewValues(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
