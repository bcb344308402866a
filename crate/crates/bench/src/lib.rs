//! Fixtures shared by the benchmarks.

use mhe_core::harness::stream_rng;
use mhe_core::system::{random_trajectory, SystemModel, Trajectory};
use mhe_core::{build_cost, EstimationProblem, Horizon, SolverSettings};

/// Estimation problem for a registry system with the default cost and solver.
pub fn problem(system: &str, horizon: Horizon) -> EstimationProblem {
    let model = SystemModel::from_registry(system, 0.05, 0.05).expect("registry system");
    let cert = model.builtin().certificate();
    let cost = build_cost(&cert, 10.0).expect("registry certificates are global");
    EstimationProblem::new(model, cert, cost, horizon, SolverSettings::default()).expect("default settings")
}

/// Seeded trajectory from `x0 = (1, .., 1)` and the prior `x0 - 0.3`.
pub fn trajectory(problem: &EstimationProblem, len: usize, seed: u64) -> (Trajectory, Vec<f64>) {
    let n = problem.model.state_dim();
    let mut rng = stream_rng(seed, 0);
    let traj = random_trajectory(&problem.model, &mut rng, vec![1.0; n], len, false).expect("inputs inside boxes");
    (traj, vec![0.7; n])
}
