use std::fmt;

use thiserror::Error;

/// A single problem found while validating a dataset.
#[derive(Debug, Clone, PartialEq)]
pub enum ValidationIssue {
    DimensionMismatch { what: String, expected: usize, found: usize },
    NonFiniteValue { matrix: &'static str, row: usize, col: usize },
    BadGroupIndex { predictor: usize, group: usize, reason: String },
    BadAnnotation { predictor: usize, value: String },
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationIssue::DimensionMismatch { what, expected, found } => {
                write!(f, "dimension mismatch in {what}: expected {expected}, found {found}")
            }
            ValidationIssue::NonFiniteValue { matrix, row, col } => {
                write!(f, "non-finite value in {matrix} at ({row}, {col})")
            }
            ValidationIssue::BadGroupIndex { predictor, group, reason } => {
                write!(f, "bad group index {group} for predictor {predictor}: {reason}")
            }
            ValidationIssue::BadAnnotation { predictor, value } => {
                write!(f, "bad annotation {value} for predictor {predictor}")
            }
        }
    }
}

fn join_issues(issues: &[ValidationIssue]) -> String {
    issues.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dataset: {}", join_issues(.0))]
    Validation(Vec<ValidationIssue>),

    #[error("matrix is not positive definite ({0})")]
    NotPositiveDefinite(String),

    #[error("degrees of freedom {df} too small for dimension {dim}")]
    DegreesOfFreedomTooSmall { df: f64, dim: usize },

    #[error("parameter {name} must be strictly positive, got {value}")]
    NonPositiveParameter { name: &'static str, value: f64 },

    #[error("annotation prior enabled but the design carries no annotations")]
    MissingAnnotations,

    #[error("numerical breakdown at sweep {sweep}: {source}")]
    NumericalBreakdown {
        sweep: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid orthogonal context: {0}")]
    InvalidContext(String),

    #[error("posterior samples are empty")]
    EmptySamples,

    #[error("response subset must be nonempty and within 1..={q}")]
    EmptySubset { q: usize },

    #[error("labels must contain at least one positive and one negative")]
    DegenerateLabels,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("unknown scenario {0:?}")]
    UnknownScenario(String),

    #[error("{path}: {message}")]
    File { path: String, message: String },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// True for errors raised by linear-algebra or sampler breakdown.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite(_) | Error::NumericalBreakdown { .. }
        )
    }

    pub fn is_io(&self) -> bool {
        matches!(self, Error::File { .. } | Error::Io(_) | Error::Csv(_) | Error::Json(_) | Error::Parse(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
