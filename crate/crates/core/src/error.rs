//! Crate-wide error type. Every fallible operation returns [`Result`].

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("scale must be a positive finite number, got {0}")]
    InvalidScale(f64),

    #[error("unsupported distribution: {0}")]
    UnsupportedDistribution(String),

    #[error("dimension mismatch: {context}")]
    DimensionMismatch { context: String },

    /// The normal matrix stayed numerically singular even after the ridge.
    #[error("weighted normal matrix numerically singular (condition estimate {cond_estimate:.3e})")]
    SingularOracle { cond_estimate: f64 },

    #[error("singular matrix in {context}")]
    SingularMatrix { context: String },

    #[error("internal consistency: {0}")]
    InternalConsistency(String),

    #[error("stale maintainer: {0}")]
    StaleMaintainer(String),

    #[error("contract violation: {0}")]
    ContractViolation(String),

    /// A per-iteration stability mass exceeded the whole-run budget.
    #[error("stability budget exceeded: per-step mass {mass:.3e} > budget {budget:.3e}")]
    BudgetExceeded { mass: f64, budget: f64 },

    /// Non-monotone weights must stay strictly positive.
    #[error("weight positivity breach at coordinate {coord} (value {value:.3e})")]
    PositivityBreach { coord: usize, value: f64 },

    #[error("optimum-scale search failed: {0}")]
    SearchFailure(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
