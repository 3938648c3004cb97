use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("only {usable} eigenvalues above the truncation threshold, {requested} requested")]
    RankDeficient { requested: usize, usable: usize },

    #[error("conjugate gradients did not converge: relative residual {residual:.3e} after {iterations} iterations")]
    CgNotConverged { residual: f64, iterations: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("classes {missing:?} are absent from the landmarks")]
    MissingClasses { missing: Vec<usize> },

    #[error("class {class} has no samples in the labelled subset; use a larger label fraction")]
    EmptyProbeClass { class: usize },

    #[error("degenerate concept separator: {0}")]
    DegenerateSeparator(String),

    #[error("training aborted: {reason}")]
    TrainingAborted { reason: String, report: Box<crate::trainer::TrainReport> },

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
