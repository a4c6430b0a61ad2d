use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// The design does not have full rank min(n, p): every (n ∧ p) columns must be
    /// linearly independent for the augmented estimator to be well defined.
    #[error("design matrix is rank deficient: numerical rank {rank}, required {required} (full-rank design assumption)")]
    RankDeficient { rank: usize, required: usize },

    #[error("singularity: {0}")]
    Singularity(String),

    #[error("solver did not converge after {iterations} iterations (last KKT residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("no lambda yields exactly {k} active groups: {detail}")]
    LambdaSelection { k: usize, detail: String },

    #[error("constraint violation: {0}")]
    ConstraintViolation(String),

    #[error("point lies on a stratum boundary: {0}")]
    Boundary(String),

    #[error("point lies outside the sample space: {0}")]
    OutsideSampleSpace(String),

    #[error("degenerate chart: {0}")]
    DegenerateChart(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("importance weights sum to zero")]
    ZeroTotalWeight,

    #[error("empty sample")]
    EmptySample,

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
