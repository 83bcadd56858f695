use thiserror::Error;

/// Errors raised by the simulation, estimation and policy-synthesis layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("exploration actions are linearly dependent (smallest singular value {sigma_min:.3e}); the exploration regressor cannot excite every parameter direction")]
    DependentActions { sigma_min: f64 },

    #[error("simulation blew up at step {step} (|x| = {norm:.3e})")]
    SimulationBlowup { step: usize, norm: f64 },

    #[error("{count} of {total} episodes had infinite cost (action left the cost domain)")]
    InvalidCost { count: usize, total: usize },

    #[error("Riccati solution lost positive semidefiniteness at t = {t} (min eigenvalue {min_eig:.3e})")]
    RiccatiIndefinite { t: f64, min_eig: f64 },

    #[error(
        "CFL condition violated: dt = {dt:.3e} > 0.4 dx^2 = {limit:.3e}; use a finer time grid or a coarser space grid"
    )]
    Cfl { dt: f64, limit: f64 },

    #[error("HJB value became non-finite at time index {step}")]
    HjbBlowup { step: usize },

    #[error("linear solve failed (condition estimate {condition:.3e})")]
    Numerical { condition: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("ledger has no policy-value estimates; run it through evaluation first")]
    MissingEvaluation,

    #[error("solver failure at episode {episode}: {source}")]
    Episode {
        episode: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("demo check failed: {0}")]
    CheckFailed(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err(context: &'static str, expected: impl ToString, got: impl ToString) -> Error {
    Error::Dimension {
        context,
        expected: expected.to_string(),
        got: got.to_string(),
    }
}
