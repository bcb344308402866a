use mhe_core::horizon::{rges_bound_functions, rges_min_horizon};
use mhe_core::kl::tau_min;
use mhe_core::system::{random_trajectory, SystemModel};
use mhe_core::{build_cost, harness, solve_window, BoundFunction, EstimationProblem, Horizon, SolverSettings};
use proptest::prelude::*;

fn family() -> impl Strategy<Value = BoundFunction> {
    prop_oneof![
        (0.2f64..5.0, 1.0f64..2.5, 0.1f64..0.95).prop_map(|(c, a, l)| BoundFunction::exp_power(c, a, l).unwrap()),
        (0.2f64..5.0, 1.0f64..2.5, 0.3f64..3.0).prop_map(|(c, a, b)| BoundFunction::frac_power(c, a, b).unwrap()),
    ]
}

/// First `tau` for which `beta(s, tau) <= eta s` on a uniform grid of
/// `[s_low, s_high]` including both ends.
fn scan(beta: &BoundFunction, eta: f64, s_low: f64, s_high: f64) -> u64 {
    let grid: Vec<f64> = (0..=1000).map(|k| s_low + (s_high - s_low) * k as f64 / 1000.0).collect();
    (0u64..)
        .find(|&tau| grid.iter().all(|&s| beta.eval(s, tau as f64).unwrap() <= eta * s))
        .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tau_min_matches_scan(beta in family(), eta in 0.1f64..0.9, lo in 0.05f64..1.0, width in 0.0f64..3.0) {
        let hi = lo + width;
        let tau = tau_min(&beta, eta, lo, hi).unwrap();
        prop_assert_eq!(tau, scan(&beta, eta, lo, hi));
    }

    #[test]
    fn tau_min_contracts_on_grid(beta in family(), eta in 0.1f64..0.9, lo in 0.0f64..1.0, width in 0.01f64..3.0) {
        let hi = lo + width;
        let tau = tau_min(&beta, eta, lo, hi).unwrap() as f64;
        for k in 0..=10_000 {
            let s = hi * k as f64 / 10_000.0;
            let rhs = eta * s.max(lo);
            prop_assert!(beta.eval(s, tau).unwrap() <= rhs + 1e-12, "s = {}", s);
        }
    }

    #[test]
    fn mhe_bounds_are_exponential(c_x in 1.0f64..40.0, c_w in 0.5f64..10.0, lambda in 0.1f64..0.98, extra in 0usize..5) {
        let t_low = rges_min_horizon(c_x, lambda).unwrap();
        let horizon = t_low + extra;
        let maps = rges_bound_functions(c_x, c_w, c_w, lambda, horizon).unwrap();
        // fitted exponential: rate c_x^(1/T) lambda, gains c_x and c_w / lambda
        let rate = c_x.powf(1.0 / horizon as f64) * lambda;
        prop_assert!(rate <= 1.0 + 1e-12);
        for t in 0..=200usize {
            let bx = maps.beta_x(1.0, t);
            prop_assert!(bx <= c_x * rate.powi(t as i32) * (1.0 + 1e-9));
            if t > 0 {
                let bw = maps.beta_w(1.0, t, 0);
                prop_assert!(bw <= c_w / lambda * rate.powi(t as i32) * (1.0 + 1e-9));
            }
        }
    }
}

fn problem(system: &str, delta: f64) -> EstimationProblem {
    let model = SystemModel::from_registry(system, delta, delta).unwrap();
    let cert = model.builtin().certificate();
    let cost = build_cost(&cert, 10.0).unwrap();
    EstimationProblem::new(model, cert, cost, Horizon::Full, SolverSettings::default()).unwrap()
}

/// The truth is feasible for the window problem, so the optimum can never
/// cost more than the true disturbances do.
#[test]
fn window_cost_never_exceeds_truth() {
    for system in ["contraction", "sin-contraction", "rotation-contraction"] {
        let p = problem(system, 0.1);
        let n = p.model.state_dim();
        for k in 0..6u64 {
            let mut rng = harness::stream_rng(99, k);
            let x0 = vec![0.7; n];
            let traj = random_trajectory(&p.model, &mut rng, x0.clone(), 5, k % 2 == 1).unwrap();
            let prior: Vec<f64> = x0.iter().map(|v| v - 0.3).collect();
            let sol = solve_window(&p, &traj.y[..5], &prior).unwrap();
            let truth = mhe_core::evaluate_cost(&p.cost, &vec![0.3; n], &traj.w[..5], &traj.v[..5], 5).unwrap();
            assert!(sol.cost <= truth + 1e-8, "{system} run {k}: {} > {truth}", sol.cost);
        }
    }
}
