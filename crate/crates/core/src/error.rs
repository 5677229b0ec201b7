use thiserror::Error;

use crate::solver::WsvmModel;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite input value")]
    NonFinite,

    #[error("degenerate training set: {0}")]
    DegenerateTrainingSet(String),

    /// The solver ran out of iterations. The best iterate is kept so callers
    /// can still use it (cross-validation does).
    #[error("solver did not converge (kkt residual {kkt_residual:.3e} after {iterations} iterations)")]
    NotConverged {
        kkt_residual: f64,
        iterations: usize,
        model: Box<WsvmModel>,
    },

    #[error("fit failed at alpha = {alpha}: {source}")]
    SweepFit {
        alpha: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("se/sp undefined: {0}")]
    SeSpUndefined(String),

    #[error("no operating point satisfies specificity >= {min_sp}")]
    InfeasibleOperatingPoint { min_sp: f64 },

    #[error("too few usable bootstrap replicates: {usable} usable, {required} required")]
    TooFewReplicates { usable: usize, required: usize },

    #[error("{failed} of {total} replications failed (more than 5%)")]
    TooManyFailures { failed: usize, total: usize },

    #[error("csv error at row {row}, column {column}: {message}")]
    CsvCell {
        row: usize,
        column: String,
        message: String,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
