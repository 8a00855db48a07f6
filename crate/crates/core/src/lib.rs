//! Width-reduced multiplicative-weights solvers for ℓ∞ regression.
//!
//! The crate is organized bottom-up: dense linear algebra helpers, the
//! problem model, weighted least-squares oracles, low-rank inverse
//! maintenance, lazy weight synchronization, randomized sketches, and the
//! solver family on top.

pub mod error;
pub mod inverse_maintenance;
pub mod l2_oracle;
pub mod lazy_update;
pub mod linalg;
pub mod mwu;
pub mod potentials;
pub mod problem;
pub mod sketching;

pub use error::{Error, Result};
pub use mwu::{
    solve_auto, solve_baseline_unaccelerated, solve_monotone, solve_nonmonotone_opt,
    solve_nonmonotone_robust, solve_nonmonotone_stable, AlgoKind, SolveBackend, SolverParams,
    SolverRun, Status,
};
pub use problem::{Distribution, DoubledInstance, Instance};
