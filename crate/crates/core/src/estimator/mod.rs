//! Full-information (FIE) and moving-horizon (MHE) estimation with the
//! max-form cost
//!
//! `V_T = max_i rho(|pi~_i|, T - iota(i) - 1)`,
//!
//! where `pi~` collects the prior offset `chi_0 - xbar`, the estimated
//! disturbances `omega_tau` and the output residuals
//! `nu_tau = y_tau - h(chi_tau)`. The residuals are not decision variables:
//! they follow from rolling out `(chi_0, omega)`.

mod solver;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::kl::BoundFunction;
use crate::linalg::dist;
use crate::system::{discount, fmt_f64, IossCertificate, SystemModel, Trajectory};
use crate::{Error, Result};

pub use solver::{solve_window, WindowSolution, FEASIBILITY_TOL};

/// Largest window the full-information estimator accepts.
pub const FIE_CAP: usize = 50;

/// Discounts covered by the construction-time cost check.
pub const COST_CHECK_TAU: usize = 200;

/// Points in `s` used by the construction-time cost check.
pub const COST_CHECK_POINTS: usize = 201;

/// Stage-cost function of the max-form cost.
#[derive(Clone, Debug, PartialEq)]
pub struct CostSpec {
    rho_low: BoundFunction,
    check_margin: f64,
}

impl CostSpec {
    /// Pair `rho_low` with a certificate, checking
    /// `rho_low(s, tau) >= alpha(2 s, tau)` on `[0, s_max] x {0..tau_max}`.
    pub fn new(
        rho_low: BoundFunction,
        cert: &IossCertificate,
        s_max: f64,
        tau_max: usize,
    ) -> Result<Self> {
        if !(s_max > 0.0 && s_max.is_finite()) {
            return Err(Error::Config(format!("cost check range s_max = {s_max} must be positive")));
        }
        let mut margin = f64::INFINITY;
        for k in 0..COST_CHECK_POINTS {
            let s = s_max * k as f64 / (COST_CHECK_POINTS - 1) as f64;
            for tau in 0..=tau_max {
                let tau = tau as f64;
                let lhs = rho_low.eval(s, tau)?;
                let rhs = cert.alpha.eval(2.0 * s, tau)?;
                margin = margin.min(lhs - rhs);
                if lhs < rhs * (1.0 - 1e-12) {
                    return Err(Error::Certificate(format!(
                        "stage cost {lhs} is below alpha(2s, tau) = {rhs} at s = {s}, tau = {tau}"
                    )));
                }
            }
        }
        Ok(Self {
            rho_low,
            check_margin: margin,
        })
    }

    pub fn rho_low(&self) -> &BoundFunction {
        &self.rho_low
    }

    /// Upper comparison function of the cost. The max-form cost is sandwiched
    /// between `max rho_low` and `max rho` with `rho = rho_low`.
    pub fn rho_up(&self) -> &BoundFunction {
        &self.rho_low
    }

    /// Smallest `rho_low(s, tau) - alpha(2 s, tau)` seen by the check.
    pub fn check_margin(&self) -> f64 {
        self.check_margin
    }
}

/// `rho_low(s, tau) = alpha(2 s, tau)`: the tightest stage cost passing the
/// certificate check, valid on `[0, s_max]`.
pub fn build_cost(cert: &IossCertificate, s_max: f64) -> Result<CostSpec> {
    if let Some(m) = cert.alpha.s_max() {
        if 2.0 * s_max > m {
            return Err(Error::Domain(format!(
                "certificate domain [0, {m}] does not cover 2 * s_max = {}",
                2.0 * s_max
            )));
        }
    }
    let rho = cert.alpha.prescaled(2.0)?;
    CostSpec::new(rho, cert, s_max, COST_CHECK_TAU)
}

/// `V_t` for explicit prior offset, disturbances and residuals.
pub fn evaluate_cost(
    spec: &CostSpec,
    chi0_minus_prior: &[f64],
    omega: &[Vec<f64>],
    nu: &[Vec<f64>],
    t: usize,
) -> Result<f64> {
    for seq in [omega, nu] {
        if seq.len() != t {
            return Err(Error::LengthMismatch {
                expected: t,
                got: seq.len(),
            });
        }
    }
    let rho = &spec.rho_low;
    let mut v = rho.eval(crate::linalg::norm(chi0_minus_prior), discount(0, t)?)?;
    for tau in 0..t {
        let d = discount(tau + 1, t)?;
        v = v
            .max(rho.eval(crate::linalg::norm(&omega[tau]), d)?)
            .max(rho.eval(crate::linalg::norm(&nu[tau]), d)?);
    }
    Ok(v)
}

/// Window length: fixed `T` or the whole history.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Horizon {
    Fixed(usize),
    Full,
}

impl Horizon {
    /// First time index of the window ending at `t`.
    pub fn window_start(self, t: usize) -> usize {
        match self {
            Horizon::Fixed(h) => t.saturating_sub(h),
            Horizon::Full => 0,
        }
    }
}

impl Serialize for Horizon {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Horizon::Fixed(h) => s.serialize_u64(*h as u64),
            Horizon::Full => s.serialize_str("full"),
        }
    }
}

impl<'de> Deserialize<'de> for Horizon {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Fixed(usize),
            Word(String),
        }
        match Repr::deserialize(d)? {
            Repr::Fixed(0) => Err(serde::de::Error::custom("horizon must be at least 1")),
            Repr::Fixed(h) => Ok(Horizon::Fixed(h)),
            Repr::Word(w) if w == "full" => Ok(Horizon::Full),
            Repr::Word(w) => Err(serde::de::Error::custom(format!(
                "horizon must be a positive integer or \"full\", got \"{w}\""
            ))),
        }
    }
}

/// How the prior of each window is chosen. Only the filtering prior
/// `xbar_(t-T) = xhat*_(t-T)` is supported.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorPolicy {
    #[default]
    Filtering,
}

/// Numerical settings of the window solver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    /// Grid points per dimension for low-dimensional windows.
    pub grid_points: usize,
    /// Cap on the total number of grid points.
    pub grid_budget: usize,
    /// Largest decision dimension solved by grid search.
    pub grid_max_dim: usize,
    /// Starting points for higher-dimensional windows.
    pub multistart: usize,
    /// Local refinements per window (best candidates first).
    pub refine_best: usize,
    /// Iteration cap of each local refinement.
    pub refine_iterations: usize,
    /// Convergence tolerance on decision variables and cost decrease.
    pub tolerance: f64,
    /// Half-width of the initial-state search box when the cost cannot bound it.
    pub search_radius: f64,
    pub seed: u64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            grid_points: 401,
            grid_budget: 1_000_000,
            grid_max_dim: 4,
            multistart: 64,
            refine_best: 4,
            refine_iterations: 200,
            tolerance: 1e-8,
            search_radius: 10.0,
            seed: 0,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if self.grid_points < 2
            || self.grid_budget == 0
            || self.multistart == 0
            || self.refine_best == 0
            || self.refine_iterations == 0
        {
            return Err(Error::Config("solver counts must be positive (grid_points >= 2)".into()));
        }
        if !(self.tolerance > 0.0 && self.search_radius > 0.0) {
            return Err(Error::Config("solver tolerance and search radius must be positive".into()));
        }
        Ok(())
    }
}

/// Everything needed to run an estimator on a trajectory.
#[derive(Clone, Debug)]
pub struct EstimationProblem {
    pub model: SystemModel,
    pub certificate: IossCertificate,
    pub cost: CostSpec,
    pub horizon: Horizon,
    pub prior_policy: PriorPolicy,
    pub solver: SolverSettings,
}

impl EstimationProblem {
    pub fn new(
        model: SystemModel,
        certificate: IossCertificate,
        cost: CostSpec,
        horizon: Horizon,
        solver: SolverSettings,
    ) -> Result<Self> {
        solver.validate()?;
        if horizon == Horizon::Fixed(0) {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        Ok(Self {
            model,
            certificate,
            cost,
            horizon,
            prior_policy: PriorPolicy::Filtering,
            solver,
        })
    }

    pub fn with_horizon(&self, horizon: Horizon) -> Self {
        let mut p = self.clone();
        p.horizon = horizon;
        p
    }
}

/// One estimator step.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceEntry {
    pub t: usize,
    pub window_start: usize,
    pub prior: Vec<f64>,
    pub xhat: Vec<f64>,
    pub cost: f64,
    pub chi0: Vec<f64>,
    pub omega: Vec<Vec<f64>>,
    pub nu: Vec<Vec<f64>>,
    /// `|x_t - xhat_t|` against the reference trajectory.
    pub err: Option<f64>,
}

/// Estimates for `t = 0..=N` of one trajectory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EstimateTrace {
    pub entries: Vec<TraceEntry>,
}

impl EstimateTrace {
    /// Write `t, xhat[..], V_opt, err` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(out);
        let n = self.entries.first().map_or(0, |e| e.xhat.len());
        let mut header = vec!["t".to_string()];
        header.extend((0..n).map(|i| format!("xhat{i}")));
        header.push("V_opt".into());
        header.push("err".into());
        wr.write_record(&header)?;
        for e in &self.entries {
            let mut row = vec![e.t.to_string()];
            row.extend(e.xhat.iter().map(fmt_f64));
            row.push(fmt_f64(&e.cost));
            row.push(e.err.as_ref().map_or_else(String::new, fmt_f64));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Moving-horizon estimation with the filtering prior. Windows shorter than
/// the horizon start at time 0 with prior `xbar0`; later windows take the
/// stored estimate at their first time step as prior. The measurement `y_t`
/// is not used for `xhat_t`.
pub fn run_mhe(problem: &EstimationProblem, traj: &Trajectory, xbar0: &[f64]) -> Result<EstimateTrace> {
    let n = problem.model.state_dim();
    if xbar0.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: xbar0.len(),
        });
    }
    let mut trace = EstimateTrace::default();
    for t in 0..=traj.len() {
        let start = problem.horizon.window_start(t);
        let prior = if start == 0 {
            xbar0.to_vec()
        } else {
            trace.entries[start].xhat.clone()
        };
        let sol = solve_window(problem, &traj.y[start..t], &prior)?;
        let err = Some(dist(&traj.x[t], &sol.xhat));
        trace.entries.push(TraceEntry {
            t,
            window_start: start,
            prior,
            xhat: sol.xhat,
            cost: sol.cost,
            chi0: sol.chi0,
            omega: sol.omega,
            nu: sol.nu,
            err,
        });
    }
    Ok(trace)
}

/// Full-information estimation: every window starts at time 0.
pub fn run_fie(problem: &EstimationProblem, traj: &Trajectory, xbar0: &[f64]) -> Result<EstimateTrace> {
    if traj.len() > FIE_CAP {
        return Err(Error::CapExceeded {
            t: traj.len(),
            cap: FIE_CAP,
        });
    }
    run_mhe(&problem.with_horizon(Horizon::Full), traj, xbar0)
}
