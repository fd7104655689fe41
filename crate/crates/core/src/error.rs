use thiserror::Error;

/// Errors raised by the numerical kernels and experiment drivers.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("element budget exceeded: {requested} elements requested, budget is {budget}")]
    BudgetExceeded { requested: u128, budget: u128 },

    #[error("unknown experiment `{0}`")]
    UnknownExperiment(String),

    #[error("unknown statistic `{statistic}` for experiment `{experiment}`")]
    UnknownStatistic {
        experiment: String,
        statistic: String,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("nonpositive datum at index {index}: ({x}, {y})")]
    NonPositive { index: usize, x: f64, y: f64 },

    #[error("degenerate value: {0}")]
    Degenerate(String),

    #[error("malformed matrix dump: {0}")]
    MalformedDump(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl LabError {
    pub fn invalid(name: impl Into<String>, reason: impl Into<String>) -> Self {
        LabError::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = LabError> = std::result::Result<T, E>;
