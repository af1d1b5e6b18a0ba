use thiserror::Error;

/// Errors raised by the estimators, the channel simulator and the evaluation harness.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A virtual source coincides with a node, so the path direction is undefined.
    #[error("degenerate geometry: path vector norm {norm:e} m is below 1e-12 m")]
    DegenerateGeometry { norm: f64 },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    /// Every coarse-grid evaluation of a likelihood was zero (log value of -inf).
    #[error("likelihood is zero on the whole search grid")]
    DegenerateObjective,

    #[error("estimator needs at least {needed} MPCs, got {got}")]
    InsufficientMpcs { needed: usize, got: usize },

    #[error("observer {observer} has {count} MPCs, permutation cap is {cap}")]
    PermutationCapExceeded { observer: usize, count: usize, cap: usize },

    /// The least-squares system is singular or too badly conditioned to solve.
    #[error("rank-deficient system (condition number {condition:e})")]
    RankDeficient { condition: f64 },

    #[error("MPC {mpc} at observer {observer} has near-antiparallel directions (1 + cos = {margin:e})")]
    AntiparallelDirections { observer: usize, mpc: usize, margin: f64 },

    #[error("error covariance is not positive definite")]
    NotPositiveDefinite,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
