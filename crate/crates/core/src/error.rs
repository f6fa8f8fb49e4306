use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("state matrix is not stable: spectral radius {spectral_radius:.6} >= 1")]
    UnstableModel { spectral_radius: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("covariance `{name}` is not positive semidefinite (min eigenvalue {min_eigenvalue:.3e})")]
    NonPsdCovariance { name: String, min_eigenvalue: f64 },

    #[error("{what}: expected length {expected}, got {got}")]
    LengthMismatch {
        what: String,
        expected: usize,
        got: usize,
    },

    #[error("Riccati iteration did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("argument out of domain: {0}")]
    Domain(String),

    #[error("invalid parameter `{name}`: {message}")]
    InvalidParameter { name: String, message: String },

    #[error("solver failure in {context}: {status}")]
    SolverFailure { context: String, status: String },

    #[error(
        "power band infeasible at step {step}, input {input}: margin {margin:.4} kW exceeds half band {half_band:.4} kW"
    )]
    PowerInfeasibleBand {
        step: usize,
        input: usize,
        margin: f64,
        half_band: f64,
    },

    #[error("baseline violates the bidding constraints at step {step}: {detail}")]
    InfeasibleBaseline { step: usize, detail: String },

    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("schema error: missing column `{column}`")]
    Schema { column: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("no policy for hour {hour} ({direction})")]
    MissingHour { hour: u32, direction: String },

    #[error("training instance {index} failed: {source}")]
    Training {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(name: &str, message: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.to_string(),
            message: message.into(),
        }
    }

    /// True for failures reported by the conic solver.
    pub fn is_solver_failure(&self) -> bool {
        match self {
            Error::SolverFailure { .. } | Error::PowerInfeasibleBand { .. } => true,
            Error::Training { source, .. } => source.is_solver_failure(),
            _ => false,
        }
    }
}
