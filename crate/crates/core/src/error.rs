use thiserror::Error;

use crate::lmi::SolveStatus;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported distribution: {0}")]
    UnsupportedDistribution(String),

    #[error("invalid distribution parameters: {0}")]
    InvalidDistribution(String),

    #[error("quadrature with {nodes} nodes is exact to degree {exact}, integrand needs degree {required}")]
    QuadratureUnderResolved {
        nodes: usize,
        exact: usize,
        required: usize,
    },

    #[error("gram matrix is singular (basis norm {0} is not positive)")]
    GramSingular(f64),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("basis mismatch: {0}")]
    BasisMismatch(String),

    #[error("malformed LMI problem: {0}")]
    BadProblem(String),

    #[error("solver breakdown: {0}")]
    SolverBreakdown(String),

    #[error("SDP backend unavailable: {0}")]
    BackendUnavailable(String),

    #[error("no stability certificate found (status {status:?}, worst residual {worst:.3e})")]
    NoCertificate {
        status: SolveStatus,
        worst: f64,
        residuals: Vec<f64>,
    },

    #[error("lyapunov matrix is singular or indefinite at rho = {0}")]
    SingularLyapunov(f64),

    #[error("state became non-finite at t = {time}")]
    NonFinite { time: f64 },

    #[error("{failed} of {total} Monte Carlo samples diverged")]
    TooManyDivergent { failed: usize, total: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
