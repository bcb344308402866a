//! Window solver for the max-form cost.
//!
//! Decision vector `z = (chi_0, omega_0, .., omega_(T-1))`. Candidates come
//! from a dense grid when `dim z` is small and from seeded random starts
//! otherwise; the best candidates are then refined locally. When the stage
//! cost is linear in `s` (`rho(s, tau) = kappa(tau) s`) refinement is a
//! sequence of second-order cone programs on the linearized rollout, which is
//! exact for linear systems. Other stage costs fall back to a bounded
//! Nelder-Mead search.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, NonnegativeConeT, SecondOrderConeT,
    SolverStatus, SupportedConeT,
};
use rand::Rng;

use super::EstimationProblem;
use crate::kl::BoundFunction;
use crate::linalg::norm;
use crate::system::{BoxSet, Builtin, SystemModel};
use crate::{Error, Result};

/// Result of one window.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowSolution {
    /// Rolled-out state at the end of the window.
    pub xhat: Vec<f64>,
    /// Optimal cost.
    pub cost: f64,
    pub chi0: Vec<f64>,
    pub omega: Vec<Vec<f64>>,
    /// Output residuals `y_tau - h(chi_tau)` of the rollout.
    pub nu: Vec<Vec<f64>>,
    /// Whether the local refinement met its tolerance.
    pub converged: bool,
}

/// Largest state or disturbance dimension of a registry system.
const MAX_DIM: usize = 4;

/// Absolute violation of the rollout constraints `nu_tau in V` and
/// `chi_tau in X` still counted as feasible. Vertex-sampled noise can leave
/// the true trajectory as the only feasible point of a window.
pub const FEASIBILITY_TOL: f64 = 1e-6;

fn within(set: &BoxSet, x: &[f64]) -> bool {
    x.iter()
        .enumerate()
        .all(|(i, v)| *v >= set.lo[i] - FEASIBILITY_TOL && *v <= set.hi[i] + FEASIBILITY_TOL)
}

/// Minimize the max-form cost over one window of measurements.
pub fn solve_window(problem: &EstimationProblem, y: &[Vec<f64>], prior: &[f64]) -> Result<WindowSolution> {
    let model = &problem.model;
    let n = model.state_dim();
    if prior.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: prior.len(),
        });
    }
    if !model.x_set().contains(prior) {
        return Err(Error::Constraint(format!("prior {prior:?} is outside X")));
    }
    if let Some(bad) = y.iter().find(|yt| yt.len() != model.output_dim()) {
        return Err(Error::LengthMismatch {
            expected: model.output_dim(),
            got: bad.len(),
        });
    }
    let win = Window::new(model, problem.cost.rho_low(), y, prior);
    if y.is_empty() {
        return Ok(win.solution(prior.to_vec(), true));
    }
    let settings = &problem.solver;
    let radius = win.search_radius(settings.search_radius);

    let mut candidates = if win.dim() <= settings.grid_max_dim {
        win.grid_candidates(radius, settings.grid_points, settings.grid_budget, settings.refine_best)
    } else {
        win.random_candidates(radius, settings.multistart, settings.refine_best, settings.seed)
    };
    if candidates.is_empty() {
        // no start explains the window: look for a feasible point first
        let z0 = win.reference_point();
        match win.phase_one(z0, settings) {
            Some(z) => candidates.push((win.cost(&z), z)),
            None => return Err(Error::Infeasible),
        }
    }

    let convex = model.builtin().is_linear() && win.gains.is_some();
    let mut best: Option<(f64, Vec<f64>, bool)> = None;
    let mut refined_costs: Vec<f64> = Vec::new();
    for (cost, z) in candidates {
        let (z, c, ok) = match win.gains {
            Some(_) => win.refine_socp(z, cost, settings, convex),
            None => win.refine_nelder_mead(z, cost, settings),
        };
        let agrees = refined_costs
            .iter()
            .any(|r| (r - c).abs() <= settings.tolerance * (1.0 + c.abs()));
        refined_costs.push(c);
        if best.as_ref().map_or(true, |(b, _, _)| c < *b) {
            best = Some((c, z, ok));
        }
        if convex || agrees {
            break;
        }
    }
    let (_, z, ok) = best.expect("at least one candidate");
    Ok(win.solution(z, ok))
}

struct Window<'a> {
    builtin: Builtin,
    x_set: &'a BoxSet,
    w_set: &'a BoxSet,
    v_set: &'a BoxSet,
    rho: &'a BoundFunction,
    /// `kappa(d)` for `d = 0..=T` when the stage cost is linear in `s`.
    gains: Option<Vec<f64>>,
    y: &'a [Vec<f64>],
    prior: &'a [f64],
    n: usize,
    g: usize,
    p: usize,
    len: usize,
}

/// First-order model of the rollout around a decision vector.
struct Linearization {
    chi: Vec<Vec<f64>>,
    nu: Vec<Vec<f64>>,
    /// `d chi_tau / d z`, row-major `n x m`, for `tau = 0..=T`.
    dchi: Vec<Vec<f64>>,
    /// `d nu_tau / d z`, row-major `p x m`.
    dnu: Vec<Vec<f64>>,
}

impl<'a> Window<'a> {
    fn new(model: &'a SystemModel, rho: &'a BoundFunction, y: &'a [Vec<f64>], prior: &'a [f64]) -> Self {
        let (n, g, p) = model.builtin().dims();
        let len = y.len();
        let gains = rho
            .linear_gain()
            .map(|l| (0..=len).map(|d| l.eval(d as f64)).collect());
        Self {
            builtin: model.builtin(),
            x_set: model.x_set(),
            w_set: model.w_set(),
            v_set: model.v_set(),
            rho,
            gains,
            y,
            prior,
            n,
            g,
            p,
            len,
        }
    }

    fn dim(&self) -> usize {
        self.n + self.g * self.len
    }

    fn omega_range(&self, tau: usize) -> std::ops::Range<usize> {
        let s = self.n + self.g * tau;
        s..s + self.g
    }

    /// `rho(s, d)`, infinite outside the stage-cost domain.
    fn term(&self, s: f64, d: usize) -> f64 {
        if let Some(m) = self.rho.s_max() {
            if s > m {
                return f64::INFINITY;
            }
        }
        match &self.gains {
            Some(k) => k[d] * s,
            None => self.rho.eval_unchecked(s, d as f64),
        }
    }

    /// Exact cost; infinite when `chi`, `omega` or `nu` leave their sets.
    fn cost(&self, z: &[f64]) -> f64 {
        let (n, p) = (self.n, self.p);
        let chi0 = &z[..n];
        if !self.x_set.contains(chi0) {
            return f64::INFINITY;
        }
        let mut x = [0.0; MAX_DIM];
        let mut next = [0.0; MAX_DIM];
        let mut hx = [0.0; MAX_DIM];
        x[..n].copy_from_slice(chi0);
        let mut dev = 0.0;
        for i in 0..n {
            dev += (chi0[i] - self.prior[i]).powi(2);
        }
        let mut v = self.term(dev.sqrt(), self.len);
        for tau in 0..self.len {
            let om = &z[self.omega_range(tau)];
            if !self.w_set.contains(om) {
                return f64::INFINITY;
            }
            self.builtin.h_into(&x[..n], &mut hx[..p]);
            let mut nu2 = 0.0;
            for j in 0..p {
                let r = self.y[tau][j] - hx[j];
                if r < self.v_set.lo[j] - FEASIBILITY_TOL || r > self.v_set.hi[j] + FEASIBILITY_TOL {
                    return f64::INFINITY;
                }
                nu2 += r * r;
            }
            let d = self.len - tau - 1;
            v = v.max(self.term(norm(om), d)).max(self.term(nu2.sqrt(), d));
            self.builtin.f_into(&x[..n], om, &mut next[..n]);
            x[..n].copy_from_slice(&next[..n]);
            if !within(self.x_set, &x[..n]) {
                return f64::INFINITY;
            }
        }
        v
    }

    fn rollout(&self, z: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut chi = vec![z[..self.n].to_vec()];
        let mut nu = Vec::with_capacity(self.len);
        for tau in 0..self.len {
            let x = &chi[tau];
            let hx = self.builtin.h(x);
            nu.push(self.y[tau].iter().zip(&hx).map(|(a, b)| a - b).collect());
            let next = self.builtin.f(x, &z[self.omega_range(tau)]);
            chi.push(next);
        }
        (chi, nu)
    }

    fn solution(&self, z: Vec<f64>, converged: bool) -> WindowSolution {
        let (chi, nu) = self.rollout(&z);
        let omega = (0..self.len).map(|tau| z[self.omega_range(tau)].to_vec()).collect();
        WindowSolution {
            xhat: chi[self.len].clone(),
            cost: self.cost(&z),
            chi0: z[..self.n].to_vec(),
            omega,
            nu,
            converged,
        }
    }

    /// The prior with zero disturbances.
    fn reference_point(&self) -> Vec<f64> {
        let mut z = vec![0.0; self.dim()];
        z[..self.n].copy_from_slice(self.prior);
        for tau in 0..self.len {
            let r = self.omega_range(tau);
            for (k, i) in r.enumerate() {
                z[i] = 0.0f64.clamp(self.w_set.lo[k], self.w_set.hi[k]);
            }
        }
        z
    }

    /// Half-width of the box around the prior that can contain minimizers:
    /// any point at most as costly as the reference point satisfies
    /// `rho(|chi_0 - xbar|, T) <= cost(reference)`.
    fn search_radius(&self, fallback: f64) -> f64 {
        let j_ref = self.cost(&self.reference_point());
        if !j_ref.is_finite() {
            return fallback;
        }
        let top = self.rho.s_max().map_or(f64::INFINITY, |m| self.rho.eval_unchecked(m, self.len as f64));
        match self.rho.inverse_first_arg(j_ref.min(top), self.len as f64) {
            Ok(r) if r.is_finite() => r.min(fallback),
            _ => fallback,
        }
    }

    fn chi0_bounds(&self, radius: f64, i: usize) -> (f64, f64) {
        let lo = (self.prior[i] - radius).max(self.x_set.lo[i]);
        let hi = (self.prior[i] + radius).min(self.x_set.hi[i]);
        (lo, hi)
    }

    fn grid_candidates(&self, radius: f64, points: usize, budget: usize, keep: usize) -> Vec<(f64, Vec<f64>)> {
        let m = self.dim();
        let mut k = points.min((budget as f64).powf(1.0 / m as f64).floor() as usize).max(3);
        if k % 2 == 0 {
            k -= 1;
        }
        let mut axes: Vec<Vec<f64>> = Vec::with_capacity(m);
        for i in 0..self.n {
            let (lo, hi) = self.chi0_bounds(radius, i);
            axes.push(linspace(lo, hi, k));
        }
        for _ in 0..self.len {
            for j in 0..self.g {
                axes.push(linspace(self.w_set.lo[j], self.w_set.hi[j], k));
            }
        }
        let mut best = TopK::new(keep);
        best.offer(self.cost(&self.reference_point()), self.reference_point());
        let mut idx = vec![0usize; m];
        let mut z: Vec<f64> = axes.iter().map(|a| a[0]).collect();
        loop {
            let c = self.cost(&z);
            best.offer_with(c, || z.clone());
            // odometer increment
            let mut d = 0;
            loop {
                if d == m {
                    return best.into_vec();
                }
                idx[d] += 1;
                if idx[d] < k {
                    z[d] = axes[d][idx[d]];
                    break;
                }
                idx[d] = 0;
                z[d] = axes[d][0];
                d += 1;
            }
        }
    }

    fn random_candidates(&self, radius: f64, starts: usize, keep: usize, seed: u64) -> Vec<(f64, Vec<f64>)> {
        let mut rng = crate::harness::stream_rng(seed, self.len as u64);
        let mut best = TopK::new(keep);
        let z0 = self.reference_point();
        best.offer(self.cost(&z0), z0);
        for _ in 1..starts {
            let mut z = vec![0.0; self.dim()];
            for i in 0..self.n {
                let (lo, hi) = self.chi0_bounds(radius, i);
                z[i] = if lo < hi { rng.gen_range(lo..=hi) } else { lo };
            }
            for tau in 0..self.len {
                let om = self.w_set.sample_uniform(&mut rng);
                z[self.omega_range(tau)].copy_from_slice(&om);
            }
            best.offer(self.cost(&z), z);
        }
        best.into_vec()
    }

    fn linearize(&self, z: &[f64]) -> Linearization {
        let (n, p, m) = (self.n, self.p, self.dim());
        let (chi, nu) = self.rollout(z);
        let mut dchi = Vec::with_capacity(self.len + 1);
        let mut s0 = vec![0.0; n * m];
        for i in 0..n {
            s0[i * m + i] = 1.0;
        }
        dchi.push(s0);
        let mut dnu = Vec::with_capacity(self.len);
        for tau in 0..self.len {
            let om = &z[self.omega_range(tau)];
            let s = &dchi[tau];
            let hj = self.builtin.jac_h(&chi[tau]);
            let mut dn = vec![0.0; p * m];
            for r in 0..p {
                for c in 0..m {
                    let mut acc = 0.0;
                    for k in 0..n {
                        acc += hj[r * n + k] * s[k * m + c];
                    }
                    dn[r * m + c] = -acc;
                }
            }
            dnu.push(dn);
            let fx = self.builtin.jac_fx(&chi[tau], om);
            let fw = self.builtin.jac_fw(&chi[tau], om);
            let mut next = vec![0.0; n * m];
            for r in 0..n {
                for c in 0..m {
                    let mut acc = 0.0;
                    for k in 0..n {
                        acc += fx[r * n + k] * s[k * m + c];
                    }
                    next[r * m + c] = acc;
                }
                for (j, c) in self.omega_range(tau).enumerate() {
                    next[r * m + c] += fw[r * self.g + j];
                }
            }
            dchi.push(next);
        }
        Linearization { chi, nu, dchi, dnu }
    }

    /// One convex subproblem. Returns the step and the model optimum.
    ///
    /// In phase one the objective is the largest violation `sigma` of the
    /// linearized `nu` and `chi` box constraints; otherwise it is the
    /// linearized max-form cost.
    fn cone_step(&self, z: &[f64], lin: &Linearization, trust: Option<f64>, phase_one: bool) -> Option<(Vec<f64>, f64)> {
        let (n, g, p, m) = (self.n, self.g, self.p, self.dim());
        let s_col = m;
        let nvar = m + 1;
        let mut rows = RowBuilder::default();

        // exact boxes on the decision variables
        for i in 0..n {
            rows.upper_box(&[(i, 1.0)], self.x_set.hi[i] - z[i], None);
            rows.lower_box(&[(i, 1.0)], z[i] - self.x_set.lo[i], None);
        }
        for tau in 0..self.len {
            for (j, c) in self.omega_range(tau).enumerate() {
                rows.upper_box(&[(c, 1.0)], self.w_set.hi[j] - z[c], None);
                rows.lower_box(&[(c, 1.0)], z[c] - self.w_set.lo[j], None);
            }
        }
        let relax = phase_one.then_some(s_col);
        // linearized boxes on the rollout
        for tau in 0..self.len {
            for j in 0..p {
                let coeffs: Vec<(usize, f64)> = (0..m)
                    .map(|c| (c, lin.dnu[tau][j * m + c]))
                    .filter(|(_, v)| *v != 0.0)
                    .collect();
                let nu = lin.nu[tau][j];
                rows.upper_box(&coeffs, self.v_set.hi[j] - nu, relax);
                rows.lower_box(&coeffs, nu - self.v_set.lo[j], relax);
            }
        }
        for tau in 1..=self.len {
            for i in 0..n {
                if self.x_set.lo[i].is_finite() || self.x_set.hi[i].is_finite() {
                    let coeffs: Vec<(usize, f64)> = (0..m)
                        .map(|c| (c, lin.dchi[tau][i * m + c]))
                        .filter(|(_, v)| *v != 0.0)
                        .collect();
                    let x = lin.chi[tau][i];
                    rows.upper_box(&coeffs, self.x_set.hi[i] - x, relax);
                    rows.lower_box(&coeffs, x - self.x_set.lo[i], relax);
                }
            }
        }
        if let Some(delta) = trust {
            for c in 0..m {
                rows.push_nonneg(vec![(c, 1.0)], delta);
                rows.push_nonneg(vec![(c, -1.0)], delta);
            }
        }
        if phase_one {
            rows.push_nonneg(vec![(s_col, -1.0)], 0.0);
        } else {
            let gains = self.gains.as_ref().expect("cone steps need a linear stage cost");
            let mut soc = |residual: &[f64], jac: &dyn Fn(usize, usize) -> f64, kappa: f64, dim: usize| {
                let mut block = vec![(vec![(s_col, -1.0)], 0.0)];
                for r in 0..dim {
                    let coeffs: Vec<(usize, f64)> = (0..m)
                        .map(|c| (c, -kappa * jac(r, c)))
                        .filter(|(_, v)| *v != 0.0)
                        .collect();
                    block.push((coeffs, kappa * residual[r]));
                }
                rows.push_soc(block);
            };
            let dev: Vec<f64> = (0..n).map(|i| z[i] - self.prior[i]).collect();
            soc(&dev, &|r, c| if r == c { 1.0 } else { 0.0 }, gains[self.len], n);
            for tau in 0..self.len {
                let kappa = gains[self.len - tau - 1];
                let range = self.omega_range(tau);
                let start = range.start;
                soc(&z[range], &|r, c| if c == start + r { 1.0 } else { 0.0 }, kappa, g);
                let dn = &lin.dnu[tau];
                soc(&lin.nu[tau], &|r, c| dn[r * m + c], kappa, p);
            }
        }

        let mut q = vec![0.0; nvar];
        q[s_col] = 1.0;
        let (a, b, cones) = rows.finish(nvar);
        let pmat = CscMatrix::<f64>::zeros((nvar, nvar));
        let settings = DefaultSettingsBuilder::default()
            .verbose(false)
            .build()
            .expect("static solver settings");
        let mut solver = DefaultSolver::new(&pmat, &q, &a, &b, &cones, settings).ok()?;
        solver.solve();
        match solver.solution.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => {
                let x = &solver.solution.x;
                Some((x[..m].to_vec(), x[s_col]))
            }
            _ => None,
        }
    }

    /// Clamp the decision variables into `X x W^T`, removing round-off from
    /// the cone solver.
    fn clamp(&self, z: &mut [f64]) {
        for i in 0..self.n {
            z[i] = z[i].clamp(self.x_set.lo[i], self.x_set.hi[i]);
        }
        for tau in 0..self.len {
            for (j, c) in self.omega_range(tau).enumerate() {
                z[c] = z[c].clamp(self.w_set.lo[j], self.w_set.hi[j]);
            }
        }
    }

    /// Drive an infeasible start into the feasible set.
    fn phase_one(&self, mut z: Vec<f64>, settings: &super::SolverSettings) -> Option<Vec<f64>> {
        let linear = self.builtin.is_linear();
        let mut trust = 1.0;
        for _ in 0..settings.refine_iterations {
            if self.cost(&z).is_finite() {
                return Some(z);
            }
            let lin = self.linearize(&z);
            let (d, sigma) = self.cone_step(&z, &lin, (!linear).then_some(trust), true)?;
            let mut cand: Vec<f64> = z.iter().zip(&d).map(|(a, b)| a + b).collect();
            self.clamp(&mut cand);
            if sigma > FEASIBILITY_TOL && linear {
                return None;
            }
            if self.cost(&cand).is_finite() {
                return Some(cand);
            }
            if linear {
                return None;
            }
            trust *= 0.5;
            z = cand;
            if trust < settings.tolerance {
                return None;
            }
        }
        None
    }

    /// Sequential cone programming with a trust region (none for linear
    /// systems, where the linearization is exact).
    fn refine_socp(
        &self,
        mut z: Vec<f64>,
        mut cost: f64,
        settings: &super::SolverSettings,
        convex: bool,
    ) -> (Vec<f64>, f64, bool) {
        let linear = self.builtin.is_linear();
        let mut trust = 1.0;
        for _ in 0..settings.refine_iterations {
            let lin = self.linearize(&z);
            let Some((d, model_cost)) = self.cone_step(&z, &lin, (!linear).then_some(trust), false) else {
                if linear {
                    return (z, cost, false);
                }
                trust *= 0.25;
                if trust < settings.tolerance {
                    return (z, cost, false);
                }
                continue;
            };
            let step = d.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let predicted = cost - model_cost;
            if predicted <= settings.tolerance * (1.0 + cost.abs()) || step <= settings.tolerance {
                return (z, cost, true);
            }
            let mut cand: Vec<f64> = z.iter().zip(&d).map(|(a, b)| a + b).collect();
            self.clamp(&mut cand);
            let new_cost = self.cost(&cand);
            let actual = cost - new_cost;
            if actual > 0.0 {
                let ratio = actual / predicted;
                z = cand;
                cost = new_cost;
                if convex {
                    return (z, cost, true);
                }
                if ratio > 0.75 {
                    trust = (2.0 * trust).min(1e3);
                } else if ratio < 0.25 {
                    trust *= 0.5;
                }
            } else {
                if linear {
                    // the model is exact; no progress means round-off only
                    return (z, cost, true);
                }
                trust = 0.25 * step.min(trust);
                if trust < settings.tolerance {
                    return (z, cost, true);
                }
            }
        }
        (z, cost, false)
    }

    /// Derivative-free refinement for stage costs without a cone model.
    fn refine_nelder_mead(&self, z: Vec<f64>, cost: f64, settings: &super::SolverSettings) -> (Vec<f64>, f64, bool) {
        let m = self.dim();
        let mut scale = vec![0.0; m];
        for (i, s) in scale.iter_mut().enumerate().take(self.n) {
            *s = 0.1 * (1.0 + z[i].abs());
        }
        for tau in 0..self.len {
            for (j, c) in self.omega_range(tau).enumerate() {
                scale[c] = 0.25 * (self.w_set.hi[j] - self.w_set.lo[j]).max(1e-12);
            }
        }
        let max_evals = settings.refine_iterations * (m + 1) * 10;
        let (z_best, c_best, ok) = nelder_mead(|x| self.cost(x), z, cost, &scale, settings.tolerance, max_evals);
        (z_best, c_best, ok)
    }
}

/// Bounded Nelder-Mead on an extended-value objective (infinite outside the
/// feasible set).
fn nelder_mead(
    f: impl Fn(&[f64]) -> f64,
    x0: Vec<f64>,
    f0: f64,
    scale: &[f64],
    tol: f64,
    max_evals: usize,
) -> (Vec<f64>, f64, bool) {
    let m = x0.len();
    let mut simplex: Vec<(f64, Vec<f64>)> = vec![(f0, x0.clone())];
    for i in 0..m {
        let mut x = x0.clone();
        x[i] += scale[i];
        let mut fx = f(&x);
        if !fx.is_finite() {
            x[i] = x0[i] - scale[i];
            fx = f(&x);
        }
        simplex.push((fx, x));
    }
    let mut evals = m;
    let mut converged = false;
    while evals < max_evals {
        simplex.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (fb, fw) = (simplex[0].0, simplex[m].0);
        let spread = (0..m)
            .map(|j| simplex.iter().map(|(_, x)| x[j]).fold(f64::NEG_INFINITY, f64::max)
                - simplex.iter().map(|(_, x)| x[j]).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max);
        if fw.is_finite() && (fw - fb) <= tol * (1.0 + fb.abs()) && spread <= tol.sqrt() {
            converged = true;
            break;
        }
        let centroid: Vec<f64> = (0..m)
            .map(|j| simplex[..m].iter().map(|(_, x)| x[j]).sum::<f64>() / m as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[m].1)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };
        let xr = along(1.0);
        let fr = f(&xr);
        evals += 1;
        if fr < simplex[0].0 {
            let xe = along(2.0);
            let fe = f(&xe);
            evals += 1;
            simplex[m] = if fe < fr { (fe, xe) } else { (fr, xr) };
            continue;
        }
        if fr < simplex[m - 1].0 {
            simplex[m] = (fr, xr);
            continue;
        }
        let xc = if fr < simplex[m].0 { along(0.5) } else { along(-0.5) };
        let fc = f(&xc);
        evals += 1;
        if fc < simplex[m].0.min(fr) {
            simplex[m] = (fc, xc);
            continue;
        }
        let best = simplex[0].1.clone();
        for (fx, x) in simplex.iter_mut().skip(1) {
            for (xi, bi) in x.iter_mut().zip(&best) {
                *xi = bi + 0.5 * (*xi - bi);
            }
            *fx = f(x);
            evals += 1;
        }
    }
    simplex.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (fb, xb) = simplex.swap_remove(0);
    (xb, fb, converged)
}

fn linspace(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    if k == 1 || lo == hi {
        return vec![lo; k];
    }
    (0..k)
        .map(|i| {
            if i == k - 1 {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (k - 1) as f64
            }
        })
        .collect()
}

/// The `k` lowest finite costs seen, earliest first among ties.
struct TopK {
    k: usize,
    items: Vec<(f64, Vec<f64>)>,
}

impl TopK {
    fn new(k: usize) -> Self {
        Self { k, items: Vec::with_capacity(k + 1) }
    }

    fn admits(&self, c: f64) -> bool {
        c.is_finite() && (self.items.len() < self.k || c < self.items[self.items.len() - 1].0)
    }

    fn offer(&mut self, c: f64, z: Vec<f64>) {
        self.offer_with(c, || z);
    }

    fn offer_with(&mut self, c: f64, z: impl FnOnce() -> Vec<f64>) {
        if !self.admits(c) {
            return;
        }
        let pos = self.items.partition_point(|(x, _)| *x <= c);
        self.items.insert(pos, (c, z()));
        self.items.truncate(self.k);
    }

    fn into_vec(self) -> Vec<(f64, Vec<f64>)> {
        self.items
    }
}

/// Accumulates constraint rows `a . x + s = b` grouped by cone.
#[derive(Default)]
struct RowBuilder {
    nonneg: Vec<(Vec<(usize, f64)>, f64)>,
    socs: Vec<Vec<(Vec<(usize, f64)>, f64)>>,
}

impl RowBuilder {
    fn push_nonneg(&mut self, coeffs: Vec<(usize, f64)>, b: f64) {
        self.nonneg.push((coeffs, b));
    }

    fn push_soc(&mut self, block: Vec<(Vec<(usize, f64)>, f64)>) {
        self.socs.push(block);
    }

    /// `a . d <= room`, relaxed by the variable in column `relax` if given.
    /// Without relaxation the bound is `max(room, 0)`, so that a point
    /// inside the feasibility tolerance keeps `d = 0` feasible. Skipped for
    /// infinite bounds.
    fn upper_box(&mut self, a: &[(usize, f64)], room: f64, relax: Option<usize>) {
        if !room.is_finite() {
            return;
        }
        let mut coeffs = a.to_vec();
        if let Some(c) = relax {
            coeffs.push((c, -1.0));
        }
        let rhs = if relax.is_some() { room } else { room.max(0.0) };
        self.push_nonneg(coeffs, rhs);
    }

    /// `-a . d <= room`.
    fn lower_box(&mut self, a: &[(usize, f64)], room: f64, relax: Option<usize>) {
        let neg: Vec<(usize, f64)> = a.iter().map(|(c, v)| (*c, -v)).collect();
        self.upper_box(&neg, room, relax);
    }

    fn finish(self, nvar: usize) -> (CscMatrix<f64>, Vec<f64>, Vec<SupportedConeT<f64>>) {
        let mut cones = Vec::new();
        let mut b = Vec::new();
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nvar];
        let mut row = 0;
        if !self.nonneg.is_empty() {
            cones.push(NonnegativeConeT(self.nonneg.len()));
        }
        let blocks = std::iter::once(self.nonneg).chain(self.socs.into_iter().map(|blk| {
            cones.push(SecondOrderConeT(blk.len()));
            blk
        }));
        for block in blocks {
            for (coeffs, rhs) in block {
                for (c, v) in coeffs {
                    cols[c].push((row, v));
                }
                b.push(rhs);
                row += 1;
            }
        }
        let mut colptr = vec![0];
        let mut rowval = Vec::new();
        let mut nzval = Vec::new();
        for col in cols {
            for (r, v) in col {
                rowval.push(r);
                nzval.push(v);
            }
            colptr.push(rowval.len());
        }
        (CscMatrix::new(row, nvar, colptr, rowval, nzval), b, cones)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linspace_hits_endpoints_and_center() {
        let v = linspace(-1.0, 1.0, 5);
        assert_eq!(v, vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
    }

    #[test]
    fn top_k_keeps_lowest() {
        let mut t = TopK::new(2);
        for (c, x) in [(3.0, 0.0), (1.0, 1.0), (f64::INFINITY, 2.0), (2.0, 3.0), (1.0, 4.0)] {
            t.offer(c, vec![x]);
        }
        let v = t.into_vec();
        assert_eq!(v, vec![(1.0, vec![1.0]), (1.0, vec![4.0])]);
    }

    #[test]
    fn nelder_mead_minimizes_a_max_of_abs() {
        let f = |x: &[f64]| (x[0] - 0.3).abs().max(2.0 * (x[1] + 0.1).abs());
        let (x, fx, ok) = nelder_mead(f, vec![1.0, 1.0], f(&[1.0, 1.0]), &[0.5, 0.5], 1e-10, 20_000);
        assert!(ok);
        assert!(fx < 1e-6, "{fx} at {x:?}");
    }
}
