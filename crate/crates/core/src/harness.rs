//! Seeded Monte-Carlo checks of the estimator error bounds, and horizon sweeps.
//!
//! Run `k` of an experiment draws everything from the stream `(seed, k)`, and
//! results are collected in run order, so outputs do not depend on the number
//! of worker threads.

use std::io::Write;
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::estimator::{build_cost, run_fie, run_mhe, CostSpec, EstimateTrace, EstimationProblem, Horizon, SolverSettings};
use crate::horizon::{error_bound_factor, rges_bound_functions, rges_min_horizon, RgesBounds};
use crate::kl::{BoundFunction, LFunction};
use crate::linalg::{add, norm};
use crate::system::{fmt_f64, random_trajectory, BoxSet, IossCertificate, SystemModel, Trajectory, VALIDATION_X0_RANGE};
use crate::{Error, Result};

/// Slack added to every bound check on top of the solver tolerance.
pub const BOUND_SLACK: f64 = 1e-10;

/// Independent random stream `index` of the master seed.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// How disturbances and prior offsets are drawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    Uniform,
    Corner,
    /// Even runs uniform, odd runs corner.
    #[default]
    Mixed,
}

impl Sampling {
    fn corner(self, run: usize) -> bool {
        match self {
            Sampling::Uniform => false,
            Sampling::Corner => true,
            Sampling::Mixed => run % 2 == 1,
        }
    }
}

fn default_cost_range() -> f64 {
    10.0
}

/// A Monte-Carlo experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: String,
    /// Defaults to the certificate shipped with the system.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<IossCertificate>,
    /// Stage cost `rho_low`; defaults to `alpha(2 s, tau)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage_cost: Option<BoundFunction>,
    /// Range of `s` on which the stage cost is checked against the certificate.
    #[serde(default = "default_cost_range")]
    pub cost_range: f64,
    /// MHE horizons; empty means the smallest certified horizon.
    #[serde(default)]
    pub horizons: Vec<usize>,
    pub runs: usize,
    pub t_max: usize,
    pub delta0: f64,
    pub delta_w: f64,
    pub delta_v: f64,
    #[serde(default)]
    pub sampling: Sampling,
    pub seed: u64,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 || self.t_max == 0 {
            return Err(Error::Config("runs and t_max must be at least 1".into()));
        }
        if self.horizons.contains(&0) {
            return Err(Error::Config("horizons must be at least 1".into()));
        }
        for (d, label) in [(self.delta0, "delta0"), (self.delta_w, "delta_w"), (self.delta_v, "delta_v")] {
            if !(d >= 0.0 && d.is_finite()) {
                return Err(Error::Config(format!("{label} = {d} must be finite and nonnegative")));
            }
        }
        self.solver.validate()
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Everything derived from a config before any run.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub problem: EstimationProblem,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let model = SystemModel::from_registry(&config.system, config.delta_w, config.delta_v)?;
        let certificate = match &config.certificate {
            Some(c) => c.clone(),
            None => model.builtin().certificate(),
        };
        let cost = match &config.stage_cost {
            Some(rho) => CostSpec::new(rho.clone(), &certificate, config.cost_range, crate::estimator::COST_CHECK_TAU)?,
            None => build_cost(&certificate, config.cost_range)?,
        };
        let problem = EstimationProblem::new(model, certificate, cost, Horizon::Full, config.solver.clone())?;
        Ok(Self { config, problem })
    }

    pub fn model(&self) -> &SystemModel {
        &self.problem.model
    }

    /// `beta(s, tau) = alpha(2 s, tau) ⊕ rho_low(s, tau)`
    pub fn fie_beta(&self, s: f64, tau: f64) -> Result<f64> {
        Ok(self
            .problem
            .certificate
            .alpha
            .eval(2.0 * s, tau)?
            .max(self.problem.cost.rho_low().eval(s, tau)?))
    }

    /// `(c, lambda)` with `fie_beta(s, tau) <= c s lambda^tau`.
    pub fn fie_constants(&self) -> Result<(f64, f64)> {
        let (c, lambda) = self
            .problem
            .certificate
            .exp_form()
            .ok_or_else(|| Error::Precondition("the MHE bound needs an exponential certificate".into()))?;
        let (cr, lr) = self
            .problem
            .cost
            .rho_low()
            .exp_form()
            .ok_or_else(|| Error::Precondition("the MHE bound needs an exponential stage cost".into()))?;
        Ok(((2.0 * c).max(cr), lambda.max(lr)))
    }

    /// Smallest horizon with a certified exponential MHE bound.
    pub fn min_horizon(&self) -> Result<usize> {
        let (c, lambda) = self.fie_constants()?;
        rges_min_horizon(c, lambda)
    }

    /// Horizons to check: the configured list, or the smallest certified one.
    pub fn horizons(&self) -> Result<Vec<usize>> {
        if self.config.horizons.is_empty() {
            Ok(vec![self.min_horizon()?])
        } else {
            Ok(self.config.horizons.clone())
        }
    }

    /// Truth trajectory and prior of run `run`.
    pub fn sample(&self, run: usize) -> Result<(Trajectory, Vec<f64>)> {
        let model = self.model();
        let n = model.state_dim();
        let mut rng = stream_rng(self.config.seed, run as u64);
        let corner = self.config.sampling.corner(run);
        let x0 = BoxSet::symmetric(n, VALIDATION_X0_RANGE).sample_uniform(&mut rng);
        let offsets = BoxSet::symmetric(n, self.config.delta0 / (n as f64).sqrt());
        let offset = if corner {
            offsets.sample_corner(&mut rng)
        } else {
            offsets.sample_uniform(&mut rng)
        };
        let xbar0 = add(&x0, &offset);
        let traj = random_trajectory(model, &mut rng, x0, self.config.t_max, corner)?;
        Ok((traj, xbar0))
    }

    fn slack(&self) -> f64 {
        BOUND_SLACK + self.problem.solver.tolerance
    }
}

/// One per-time check of a realized error against its bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCheckResult {
    pub run_id: usize,
    pub t: usize,
    /// Horizon of the estimator; equal to `t` for full information.
    #[serde(rename = "T")]
    pub horizon: usize,
    pub err: f64,
    pub bound: f64,
    pub margin: f64,
    pub pass: bool,
}

/// Data reproducing a failed check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundCounterexample {
    pub run_id: usize,
    pub t: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub err: f64,
    pub bound: f64,
    pub xbar0: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub xhat: Vec<Vec<f64>>,
}

/// All checks of one experiment, in run then time order.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Verification {
    pub results: Vec<BoundCheckResult>,
    pub counterexample: Option<BoundCounterexample>,
}

impl Verification {
    pub fn failures(&self) -> usize {
        self.results.iter().filter(|r| !r.pass).count()
    }

    pub fn passed(&self) -> bool {
        self.failures() == 0
    }

    pub fn summary(&self, config: &ExperimentConfig) -> Summary {
        let checks = self.results.len();
        let failures = self.failures();
        Summary {
            checks,
            failures,
            pass_rate: if checks == 0 { 1.0 } else { (checks - failures) as f64 / checks as f64 },
            worst_margin: self.results.iter().map(|r| r.margin).fold(f64::INFINITY, f64::min),
            config_hash: config.hash(),
        }
    }

    /// `run_id,t,T,err,bound,margin,pass`
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(out);
        wr.write_record(["run_id", "t", "T", "err", "bound", "margin", "pass"])?;
        for r in &self.results {
            wr.write_record([
                r.run_id.to_string(),
                r.t.to_string(),
                r.horizon.to_string(),
                fmt_f64(&r.err),
                fmt_f64(&r.bound),
                fmt_f64(&r.margin),
                r.pass.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    fn extend(&mut self, other: Verification) {
        self.results.extend(other.results);
        if self.counterexample.is_none() {
            self.counterexample = other.counterexample;
        }
    }
}

/// Aggregate written next to the per-check CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub checks: usize,
    pub failures: usize,
    pub pass_rate: f64,
    pub worst_margin: f64,
    pub config_hash: String,
}

/// Run `f` on a pool of `jobs` threads.
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn per_run<F>(exp: &Experiment, check: F) -> Result<Verification>
where
    F: Fn(&Trajectory, &[f64], &EstimateTrace) -> Result<Vec<(usize, f64)>> + Sync,
{
    let runs: Vec<Result<(Trajectory, Vec<f64>, EstimateTrace, Vec<(usize, f64)>)>> = (0..exp.config.runs)
        .into_par_iter()
        .map(|run| {
            let (traj, xbar0) = exp.sample(run)?;
            let trace = match exp.problem.horizon {
                Horizon::Full => run_fie(&exp.problem, &traj, &xbar0)?,
                Horizon::Fixed(_) => run_mhe(&exp.problem, &traj, &xbar0)?,
            };
            let bounds = check(&traj, &xbar0, &trace)?;
            Ok((traj, xbar0, trace, bounds))
        })
        .collect();

    let slack = exp.slack();
    let mut out = Verification::default();
    for (run_id, r) in runs.into_iter().enumerate() {
        let (traj, xbar0, trace, bounds) = r?;
        let mut first_failure = None;
        for (entry, (horizon, bound)) in trace.entries.iter().zip(bounds) {
            let err = entry.err.expect("traces of simulated runs carry errors");
            let pass = err <= bound + slack;
            if !pass && first_failure.is_none() {
                first_failure = Some((entry.t, horizon, err, bound));
            }
            out.results.push(BoundCheckResult {
                run_id,
                t: entry.t,
                horizon,
                err,
                bound,
                margin: bound - err,
                pass,
            });
        }
        if let (None, Some((t, horizon, err, bound))) = (&out.counterexample, first_failure) {
            out.counterexample = Some(BoundCounterexample {
                run_id,
                t,
                horizon,
                err,
                bound,
                xbar0,
                x: traj.x,
                w: traj.w,
                v: traj.v,
                xhat: trace.entries.into_iter().map(|e| e.xhat).collect(),
            });
        }
    }
    Ok(out)
}

/// Full-information error against
/// `max_i beta(|pi_i|, t - iota(i) - 1)` with
/// `pi = (x_0 - xbar_0, w_0.., v_0..)` and `beta = alpha(2 s, tau) ⊕ rho_low(s, tau)`.
pub fn verify_fie_bound(exp: &Experiment) -> Result<Verification> {
    let mut exp = exp.clone();
    exp.problem.horizon = Horizon::Full;
    let exp = &exp;
    per_run(exp, |traj, xbar0, _| {
        let e0 = crate::linalg::dist(&traj.x[0], xbar0);
        let wn: Vec<f64> = traj.w.iter().map(|w| norm(w)).collect();
        let vn: Vec<f64> = traj.v.iter().map(|v| norm(v)).collect();
        (0..=traj.len())
            .map(|t| {
                let mut b = exp.fie_beta(e0, t as f64)?;
                for tau in 0..t {
                    let d = (t - tau - 1) as f64;
                    b = b.max(exp.fie_beta(wn[tau], d)?).max(exp.fie_beta(vn[tau], d)?);
                }
                Ok((t, b))
            })
            .collect()
    })
}

/// Exponential MHE bound for horizon `T` built from [`Experiment::fie_constants`].
pub fn mhe_bounds(exp: &Experiment, horizon: usize) -> Result<RgesBounds> {
    let (c, lambda) = exp.fie_constants()?;
    let t_low = rges_min_horizon(c, lambda)?;
    if horizon < t_low {
        return Err(Error::Precondition(format!(
            "horizon {horizon} is below the certified minimum {t_low}"
        )));
    }
    rges_bound_functions(c, c, c, lambda, horizon)
}

/// MHE error with the filtering prior against the composed exponential bound.
pub fn verify_mhe_bound(exp: &Experiment, horizon: usize) -> Result<Verification> {
    let bounds = mhe_bounds(exp, horizon)?;
    let mut exp = exp.clone();
    exp.problem.horizon = Horizon::Fixed(horizon);
    per_run(&exp, |traj, xbar0, _| {
        let e0 = crate::linalg::dist(&traj.x[0], xbar0);
        let wn: Vec<f64> = traj.w.iter().map(|w| norm(w)).collect();
        let vn: Vec<f64> = traj.v.iter().map(|v| norm(v)).collect();
        Ok((0..=traj.len()).map(|t| (horizon, bounds.bound(e0, &wn, &vn, t))).collect())
    })
}

/// MHE checks for every configured horizon, concatenated.
pub fn verify_mhe_all(exp: &Experiment) -> Result<Verification> {
    let mut out = Verification::default();
    for h in exp.horizons()? {
        out.extend(verify_mhe_bound(exp, h)?);
    }
    Ok(out)
}

/// One row of a horizon sweep.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    #[serde(rename = "T")]
    pub horizon: usize,
    pub worst_err: f64,
    pub mean_err: f64,
    pub bound_factor: f64,
    pub pass_rate: f64,
}

/// Run the MHE check for each configured horizon. The bound factor uses
/// `eta = c lambda^T_low` and `phi(d) = lambda^d` at `t = t_max`.
pub fn sweep_horizon(exp: &Experiment) -> Result<(Vec<SweepRow>, Verification)> {
    let (c, lambda) = exp.fie_constants()?;
    let t_low = rges_min_horizon(c, lambda)?;
    let eta = c * lambda.powi(t_low as i32);
    let phi = LFunction::Exp { scale: 1.0, lambda };
    let mut rows = Vec::new();
    let mut all = Verification::default();
    for h in exp.horizons()? {
        let v = verify_mhe_bound(exp, h)?;
        let errs: Vec<f64> = v.results.iter().map(|r| r.err).collect();
        rows.push(SweepRow {
            horizon: h,
            worst_err: errs.iter().copied().fold(0.0, f64::max),
            mean_err: errs.iter().sum::<f64>() / errs.len() as f64,
            bound_factor: error_bound_factor(eta, &phi, h, t_low, exp.config.t_max)?,
            pass_rate: v.summary(&exp.config).pass_rate,
        });
        all.extend(v);
    }
    Ok((rows, all))
}

/// `T,worst_err,mean_err,bound_factor,pass_rate`
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(out);
    wr.write_record(["T", "worst_err", "mean_err", "bound_factor", "pass_rate"])?;
    for r in rows {
        wr.write_record([
            r.horizon.to_string(),
            fmt_f64(&r.worst_err),
            fmt_f64(&r.mean_err),
            fmt_f64(&r.bound_factor),
            fmt_f64(&r.pass_rate),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(system: &str, runs: usize, t_max: usize) -> ExperimentConfig {
        ExperimentConfig {
            system: system.into(),
            certificate: None,
            stage_cost: None,
            cost_range: 10.0,
            horizons: vec![],
            runs,
            t_max,
            delta0: 0.5,
            delta_w: 0.05,
            delta_v: 0.05,
            sampling: Sampling::Mixed,
            seed: 7,
            solver: SolverSettings::default(),
            output: None,
        }
    }

    #[test]
    fn streams_are_independent_and_reproducible() {
        use rand::Rng;
        let a: u64 = stream_rng(1, 0).gen();
        let b: u64 = stream_rng(1, 1).gen();
        let c: u64 = stream_rng(2, 0).gen();
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, stream_rng(1, 0).gen::<u64>());
    }

    #[test]
    fn zero_uncertainty_gives_zero_error_and_bound() {
        let mut cfg = config("contraction", 2, 5);
        cfg.delta0 = 0.0;
        cfg.delta_w = 0.0;
        cfg.delta_v = 0.0;
        let exp = Experiment::new(cfg).unwrap();
        let v = verify_fie_bound(&exp).unwrap();
        assert!(v.passed());
        for r in &v.results {
            assert_eq!(r.err, 0.0);
            assert_eq!(r.bound, 0.0);
        }
    }

    #[test]
    fn contraction_fie_bound_holds() {
        let exp = Experiment::new(config("contraction", 6, 12)).unwrap();
        let v = verify_fie_bound(&exp).unwrap();
        assert_eq!(v.results.len(), 6 * 13);
        assert!(v.passed(), "{:?}", v.counterexample);
        assert_eq!(v.results[5].horizon, v.results[5].t);
    }

    #[test]
    fn long_horizon_reproduces_fie() {
        let mut cfg = config("contraction", 3, 8);
        cfg.horizons = vec![8];
        let exp = Experiment::new(cfg).unwrap();
        let fie = verify_fie_bound(&exp).unwrap();
        let mhe = verify_mhe_bound(&exp, 8).unwrap();
        for (a, b) in fie.results.iter().zip(&mhe.results) {
            assert!((a.err - b.err).abs() <= 1e-10);
        }
    }

    #[test]
    fn mhe_below_certified_horizon_is_rejected() {
        let exp = Experiment::new(config("contraction", 1, 3)).unwrap();
        assert_eq!(exp.min_horizon().unwrap(), 8);
        assert!(matches!(verify_mhe_bound(&exp, 2), Err(Error::Precondition(_))));
    }

    #[test]
    fn csv_and_summary() {
        let exp = Experiment::new(config("contraction", 2, 3)).unwrap();
        let v = verify_fie_bound(&exp).unwrap();
        let mut buf = Vec::new();
        v.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("run_id,t,T,err,bound,margin,pass\n"));
        assert_eq!(text.lines().count(), 1 + 2 * 4);
        let s = v.summary(&exp.config);
        assert_eq!(s.pass_rate, 1.0);
        assert_eq!(s.config_hash.len(), 64);
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let mut j = serde_json::to_value(config("contraction", 1, 1)).unwrap();
        j["bogus"] = 1.into();
        assert!(serde_json::from_value::<ExperimentConfig>(j).is_err());
    }
}
