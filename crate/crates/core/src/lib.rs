//! Optimization-based state estimation for discrete-time nonlinear systems.
//!
//! The crate provides:
//!
//! * [`kl`]: comparison functions (K, L, KL) with evaluation, inversion,
//!   composition and the smallest contracting discount `tau_min`.
//! * [`system`]: a registry of small certified systems, simulation, the
//!   deviation sequence `pi` with its time-index map and a numeric check of
//!   incremental input/output-to-state stability certificates.
//! * [`estimator`]: full-information and moving-horizon estimators built on a
//!   max-form cost derived from the certificate.
//! * [`horizon`]: explicit sufficient horizon sizes and the associated
//!   error-bound functions.
//! * [`harness`]: seeded Monte-Carlo experiments checking the estimate error
//!   bounds against realized errors.

pub mod config;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod horizon;
pub mod kl;
pub mod linalg;
pub mod system;

pub use error::{Error, Result};
pub use estimator::{
    build_cost, evaluate_cost, run_fie, run_mhe, solve_window, CostSpec, EstimateTrace,
    EstimationProblem, Horizon, SolverSettings, WindowSolution,
};
pub use kl::{compose_n, oplus, tau_min, BoundFunction, Family, KFunction, LFunction, MaxCombination};
pub use system::{iota, pi_sequence, simulate, IossCertificate, SystemModel, Trajectory};
