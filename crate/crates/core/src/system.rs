//! Discrete-time systems `x+ = f(x, w)`, `y = h(x) + v` from a small registry,
//! with simulation, the deviation sequence `pi`, its time-index map and a
//! numeric check of incremental input/output-to-state stability (i-IOSS)
//! certificates.

use std::f64::consts::FRAC_1_SQRT_2;
use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::kl::BoundFunction;
use crate::linalg::{dist, norm, sub};
use crate::{Error, Result};

/// Rotation angle of the two-dimensional registry system. Small enough that
/// the second coordinate is only weakly visible through the first.
pub const ROTATION_THETA: f64 = 0.01;

/// Contraction factor of the two-dimensional registry system.
pub const ROTATION_GAIN: f64 = 0.9;

/// Dynamics and output maps available by name.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Builtin {
    /// `x+ = 0.5 x + w`, `y = x + v`
    Contraction,
    /// `x+ = 0.5 sin(x) + w`, `y = x + v`
    SinContraction,
    /// `x+ = 0.9 R(theta) x + w`, `y = x[0] + v`
    RotationContraction,
}

impl Builtin {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "contraction" => Ok(Builtin::Contraction),
            "sin-contraction" => Ok(Builtin::SinContraction),
            "rotation-contraction" => Ok(Builtin::RotationContraction),
            other => Err(Error::Config(format!(
                "unknown system '{other}' (known: contraction, sin-contraction, rotation-contraction)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Builtin::Contraction => "contraction",
            Builtin::SinContraction => "sin-contraction",
            Builtin::RotationContraction => "rotation-contraction",
        }
    }

    /// `(n, g, p)`: state, disturbance and output dimensions.
    pub fn dims(self) -> (usize, usize, usize) {
        match self {
            Builtin::Contraction | Builtin::SinContraction => (1, 1, 1),
            Builtin::RotationContraction => (2, 2, 1),
        }
    }

    /// Whether `f` and `h` are linear (affine with zero offset).
    pub fn is_linear(self) -> bool {
        !matches!(self, Builtin::SinContraction)
    }

    pub fn f(self, x: &[f64], w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dims().0];
        self.f_into(x, w, &mut out);
        out
    }

    pub fn h(self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dims().2];
        self.h_into(x, &mut out);
        out
    }

    /// Allocation-free `f`; `out` has length `n`.
    pub fn f_into(self, x: &[f64], w: &[f64], out: &mut [f64]) {
        match self {
            Builtin::Contraction => out[0] = 0.5 * x[0] + w[0],
            Builtin::SinContraction => out[0] = 0.5 * x[0].sin() + w[0],
            Builtin::RotationContraction => {
                let (s, c) = ROTATION_THETA.sin_cos();
                out[0] = ROTATION_GAIN * (c * x[0] - s * x[1]) + w[0];
                out[1] = ROTATION_GAIN * (s * x[0] + c * x[1]) + w[1];
            }
        }
    }

    /// Allocation-free `h`; `out` has length `p`.
    pub fn h_into(self, x: &[f64], out: &mut [f64]) {
        out[0] = x[0];
    }

    /// `df/dx` at `(x, w)`, row-major `n x n`.
    pub fn jac_fx(self, x: &[f64], _w: &[f64]) -> Vec<f64> {
        match self {
            Builtin::Contraction => vec![0.5],
            Builtin::SinContraction => vec![0.5 * x[0].cos()],
            Builtin::RotationContraction => {
                let (s, c) = ROTATION_THETA.sin_cos();
                let a = ROTATION_GAIN;
                vec![a * c, -a * s, a * s, a * c]
            }
        }
    }

    /// `df/dw`, row-major `n x g`.
    pub fn jac_fw(self, _x: &[f64], _w: &[f64]) -> Vec<f64> {
        match self {
            Builtin::Contraction | Builtin::SinContraction => vec![1.0],
            Builtin::RotationContraction => vec![1.0, 0.0, 0.0, 1.0],
        }
    }

    /// `dh/dx`, row-major `p x n`.
    pub fn jac_h(self, _x: &[f64]) -> Vec<f64> {
        match self {
            Builtin::Contraction | Builtin::SinContraction => vec![1.0],
            Builtin::RotationContraction => vec![1.0, 0.0],
        }
    }

    /// The exp-i-IOSS certificate shipped with the system.
    ///
    /// Both scalar systems contract increments by 0.5 (`|sin a - sin b| <=
    /// |a - b|`), so `|e_t| <= 0.5^t |e_0| + sum_k 0.5^k |dw_(t-1-k)|`. With
    /// `lambda = sqrt(0.5)` the sum is dominated by `max_i lambda^(..)|pi_i|`
    /// times `1 / (1 - 0.5 / lambda)`; the constant below doubles
    /// `max(2, 1 / (1 - sqrt(0.5)))` for margin. The rotation system
    /// contracts by 0.9, and `1 / (1 - 0.9 / 0.95) = 19 < 20`.
    pub fn certificate(self) -> IossCertificate {
        let alpha = match self {
            Builtin::Contraction | Builtin::SinContraction => {
                let lambda = FRAC_1_SQRT_2;
                let c = 2.0 * f64::max(2.0, 1.0 / (1.0 - lambda));
                BoundFunction::exp_power(c, 1.0, lambda)
            }
            Builtin::RotationContraction => BoundFunction::exp_power(20.0, 1.0, 0.95),
        };
        IossCertificate::new(alpha.expect("registry constants are valid"), Validity::Global)
    }
}

/// Axis-aligned box; bounds may be infinite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSet {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxSet {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::LengthMismatch {
                expected: lo.len(),
                got: hi.len(),
            });
        }
        if lo.iter().zip(&hi).any(|(l, h)| l.is_nan() || h.is_nan() || l > h) {
            return Err(Error::Config("box needs lo <= hi componentwise".into()));
        }
        Ok(Self { lo, hi })
    }

    pub fn unbounded(dim: usize) -> Self {
        Self {
            lo: vec![f64::NEG_INFINITY; dim],
            hi: vec![f64::INFINITY; dim],
        }
    }

    /// The box `[-half, half]^dim`.
    pub fn symmetric(dim: usize, half: f64) -> Self {
        Self {
            lo: vec![-half; dim],
            hi: vec![half; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| *v >= *l && *v <= *h)
    }

    pub fn is_bounded(&self) -> bool {
        self.lo.iter().chain(&self.hi).all(|v| v.is_finite())
    }

    /// Largest Euclidean norm of a point in the box.
    pub fn radius(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| {
                let m = l.abs().max(h.abs());
                m * m
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn sample_uniform(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| if l == h { *l } else { rng.gen_range(*l..=*h) })
            .collect()
    }

    /// A uniformly chosen vertex.
    pub fn sample_corner(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| if rng.gen::<bool>() { *h } else { *l })
            .collect()
    }
}

/// A registry system with its constraint sets and disturbance bounds.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemModel {
    builtin: Builtin,
    x_set: BoxSet,
    w_set: BoxSet,
    v_set: BoxSet,
    delta_w: f64,
    delta_v: f64,
}

impl SystemModel {
    /// Registry system with unbounded `X` and the largest cubes inscribed in
    /// the balls of radius `delta_w` and `delta_v` as `W` and `V`.
    pub fn from_registry(name: &str, delta_w: f64, delta_v: f64) -> Result<Self> {
        let builtin = Builtin::from_name(name)?;
        let (n, g, p) = builtin.dims();
        let w_set = BoxSet::symmetric(g, delta_w / (g as f64).sqrt());
        let v_set = BoxSet::symmetric(p, delta_v / (p as f64).sqrt());
        Self::new(builtin, BoxSet::unbounded(n), w_set, v_set, delta_w, delta_v)
    }

    pub fn new(
        builtin: Builtin,
        x_set: BoxSet,
        w_set: BoxSet,
        v_set: BoxSet,
        delta_w: f64,
        delta_v: f64,
    ) -> Result<Self> {
        let (n, g, p) = builtin.dims();
        for (set, dim, label) in [(&x_set, n, "X"), (&w_set, g, "W"), (&v_set, p, "V")] {
            if set.dim() != dim {
                return Err(Error::Config(format!(
                    "{label} has dimension {}, system needs {dim}",
                    set.dim()
                )));
            }
        }
        for (set, delta, label) in [(&w_set, delta_w, "delta_w"), (&v_set, delta_v, "delta_v")] {
            if !(delta >= 0.0 && delta.is_finite()) {
                return Err(Error::Config(format!("{label} must be finite and nonnegative")));
            }
            if set.radius() > delta * (1.0 + 1e-12) {
                return Err(Error::Config(format!(
                    "{label} = {delta} does not dominate the box radius {}",
                    set.radius()
                )));
            }
        }
        Ok(Self {
            builtin,
            x_set,
            w_set,
            v_set,
            delta_w,
            delta_v,
        })
    }

    pub fn builtin(&self) -> Builtin {
        self.builtin
    }

    pub fn name(&self) -> &'static str {
        self.builtin.name()
    }

    pub fn state_dim(&self) -> usize {
        self.builtin.dims().0
    }

    pub fn disturbance_dim(&self) -> usize {
        self.builtin.dims().1
    }

    pub fn output_dim(&self) -> usize {
        self.builtin.dims().2
    }

    pub fn x_set(&self) -> &BoxSet {
        &self.x_set
    }

    pub fn w_set(&self) -> &BoxSet {
        &self.w_set
    }

    pub fn v_set(&self) -> &BoxSet {
        &self.v_set
    }

    pub fn delta_w(&self) -> f64 {
        self.delta_w
    }

    pub fn delta_v(&self) -> f64 {
        self.delta_v
    }

    pub fn f(&self, x: &[f64], w: &[f64]) -> Vec<f64> {
        self.builtin.f(x, w)
    }

    pub fn h(&self, x: &[f64]) -> Vec<f64> {
        self.builtin.h(x)
    }
}

/// A simulated run: `x` has one more entry than `w`, `v` and `y`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub x: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
}

impl Trajectory {
    /// Number of transitions `t`.
    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    /// The first `t` transitions.
    pub fn prefix(&self, t: usize) -> Result<Trajectory> {
        if t > self.len() {
            return Err(Error::Index {
                index: t,
                max: self.len(),
            });
        }
        Ok(Trajectory {
            x: self.x[..=t].to_vec(),
            w: self.w[..t].to_vec(),
            v: self.v[..t].to_vec(),
            y: self.y[..t].to_vec(),
        })
    }

    /// Write `t, x[..], w[..], v[..], y[..]` rows; the final state row has
    /// empty disturbance and output cells.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let (n, g, p) = (
            self.x[0].len(),
            self.w.first().map_or(0, Vec::len),
            self.y.first().map_or(0, Vec::len),
        );
        let mut wr = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((0..n).map(|i| format!("x{i}")));
        header.extend((0..g).map(|i| format!("w{i}")));
        header.extend((0..p).map(|i| format!("v{i}")));
        header.extend((0..p).map(|i| format!("y{i}")));
        wr.write_record(&header)?;
        for t in 0..self.x.len() {
            let mut row = vec![t.to_string()];
            row.extend(self.x[t].iter().map(fmt_f64));
            let cell = |seq: &[Vec<f64>], dim: usize| -> Vec<String> {
                seq.get(t)
                    .map_or_else(|| vec![String::new(); dim], |v| v.iter().map(fmt_f64).collect())
            };
            row.extend(cell(&self.w, g));
            row.extend(cell(&self.v, p));
            row.extend(cell(&self.y, p));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }
}

pub(crate) fn fmt_f64(v: &f64) -> String {
    format!("{v:e}")
}

/// Roll out `x_(t+1) = f(x_t, w_t)` and `y_t = h(x_t) + v_t`.
pub fn simulate(model: &SystemModel, x0: &[f64], w: &[Vec<f64>], v: &[Vec<f64>]) -> Result<Trajectory> {
    if w.len() != v.len() {
        return Err(Error::LengthMismatch {
            expected: w.len(),
            got: v.len(),
        });
    }
    if !model.x_set.contains(x0) {
        return Err(Error::Constraint(format!("x0 = {x0:?} is outside X")));
    }
    if let Some(tau) = w.iter().position(|wt| !model.w_set.contains(wt)) {
        return Err(Error::Constraint(format!("w_{tau} = {:?} is outside W", w[tau])));
    }
    if let Some(tau) = v.iter().position(|vt| !model.v_set.contains(vt)) {
        return Err(Error::Constraint(format!("v_{tau} = {:?} is outside V", v[tau])));
    }
    let mut x = Vec::with_capacity(w.len() + 1);
    let mut y = Vec::with_capacity(w.len());
    x.push(x0.to_vec());
    for (wt, vt) in w.iter().zip(v) {
        let xt = x.last().expect("nonempty");
        let hx = model.h(xt);
        y.push(hx.iter().zip(vt).map(|(a, b)| a + b).collect());
        let next = model.f(xt, wt);
        x.push(next);
    }
    Ok(Trajectory {
        x,
        w: w.to_vec(),
        v: v.to_vec(),
        y,
    })
}

/// Time index of entry `i` of a deviation sequence of length `2t + 1`.
pub fn iota(i: usize, t: usize) -> Result<i64> {
    if i > 2 * t {
        return Err(Error::Index { index: i, max: 2 * t });
    }
    Ok(if i == 0 {
        -1
    } else if i <= t {
        i as i64 - 1
    } else {
        (i - t) as i64 - 1
    })
}

/// Discount `t - iota(i) - 1` applied to entry `i`.
pub fn discount(i: usize, t: usize) -> Result<f64> {
    Ok((t as i64 - iota(i, t)? - 1) as f64)
}

/// Deviation vectors between two runs of the same system: the initial state
/// difference, the disturbance differences and the output differences
/// `h(x2_tau) - h(x1_tau)`.
pub fn pi_sequence(model: &SystemModel, traj1: &Trajectory, traj2: &Trajectory) -> Result<Vec<Vec<f64>>> {
    if traj1.len() != traj2.len() {
        return Err(Error::LengthMismatch {
            expected: traj1.len(),
            got: traj2.len(),
        });
    }
    let t = traj1.len();
    let mut pi = Vec::with_capacity(2 * t + 1);
    pi.push(sub(&traj1.x[0], &traj2.x[0]));
    for tau in 0..t {
        pi.push(sub(&traj1.w[tau], &traj2.w[tau]));
    }
    for tau in 0..t {
        pi.push(sub(&model.h(&traj2.x[tau]), &model.h(&traj1.x[tau])));
    }
    Ok(pi)
}

/// Region in which a certificate is claimed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Validity {
    Global,
    /// Only pairs with `|x1_0 - x2_0| <= delta0`.
    Local { delta0: f64 },
}

/// A KL function `alpha` claimed to satisfy the i-IOSS inequality
/// `|x1_t - x2_t| <= max_i alpha(|pi_i|, t - iota(i) - 1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IossCertificate {
    pub alpha: BoundFunction,
    #[serde(default = "global")]
    pub validity: Validity,
}

fn global() -> Validity {
    Validity::Global
}

impl IossCertificate {
    pub fn new(alpha: BoundFunction, validity: Validity) -> Self {
        Self { alpha, validity }
    }

    /// `(c, lambda)` when `alpha(s, tau) = c s lambda^tau`.
    pub fn exp_form(&self) -> Option<(f64, f64)> {
        self.alpha.exp_form()
    }

    /// Same certificate with the decay rate multiplied by `factor`.
    pub fn with_scaled_rate(&self, factor: f64) -> Result<Self> {
        let (c, lambda) = self.exp_form().ok_or_else(|| {
            Error::Certificate("rate scaling needs an exponential certificate".into())
        })?;
        let alpha = BoundFunction::exp_power(c, 1.0, lambda * factor)?.with_s_max(self.alpha.s_max())?;
        Ok(Self::new(alpha, self.validity.clone()))
    }
}

/// Outcome of [`check_ioss`]. `worst_margin` is the smallest `bound - error`
/// over all prefixes, attained at `worst_t`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IossReport {
    pub holds: bool,
    pub worst_margin: f64,
    pub worst_t: usize,
}

/// Slack allowed in the i-IOSS inequality.
pub const IOSS_SLACK: f64 = 1e-10;

/// Check the certificate inequality on every prefix of a trajectory pair.
pub fn check_ioss(
    model: &SystemModel,
    cert: &IossCertificate,
    traj1: &Trajectory,
    traj2: &Trajectory,
) -> Result<IossReport> {
    if let Validity::Local { delta0 } = cert.validity {
        let d = dist(&traj1.x[0], &traj2.x[0]);
        if d > delta0 {
            return Err(Error::Domain(format!(
                "initial states differ by {d}, beyond the certified {delta0}"
            )));
        }
    }
    let pi = pi_sequence(model, traj1, traj2)?;
    let full = traj1.len();
    let norms: Vec<f64> = pi.iter().map(|p| norm(p)).collect();
    let x0_norm = norms[0];
    let w_norms = &norms[1..=full];
    let h_norms = &norms[full + 1..];

    let mut report = IossReport {
        holds: true,
        worst_margin: f64::INFINITY,
        worst_t: 0,
    };
    for t in 0..=full {
        let err = dist(&traj1.x[t], &traj2.x[t]);
        let mut bound = cert.alpha.eval(x0_norm, t as f64)?;
        for tau in 0..t {
            let disc = (t - tau - 1) as f64;
            bound = bound
                .max(cert.alpha.eval(w_norms[tau], disc)?)
                .max(cert.alpha.eval(h_norms[tau], disc)?);
        }
        let margin = bound - err;
        if margin < report.worst_margin {
            report.worst_margin = margin;
            report.worst_t = t;
        }
        if err > bound + IOSS_SLACK {
            report.holds = false;
        }
    }
    Ok(report)
}

/// A trajectory pair violating a certificate.
#[derive(Clone, Debug, Serialize)]
pub struct Counterexample {
    pub pair: usize,
    pub t: usize,
    pub margin: f64,
    pub x1: Vec<Vec<f64>>,
    pub w1: Vec<Vec<f64>>,
    pub x2: Vec<Vec<f64>>,
    pub w2: Vec<Vec<f64>>,
}

/// Aggregate of a Monte-Carlo certificate validation.
#[derive(Clone, Debug, Serialize)]
pub struct CertificateValidation {
    pub pairs: usize,
    pub violations: usize,
    pub worst_margin: f64,
    pub counterexample: Option<Counterexample>,
}

impl CertificateValidation {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Half-width of the box from which Monte-Carlo initial states are drawn.
pub const VALIDATION_X0_RANGE: f64 = 2.0;

/// Draw a random trajectory of length `t` with disturbances either uniform on
/// the boxes or at uniformly chosen vertices.
pub fn random_trajectory(
    model: &SystemModel,
    rng: &mut ChaCha8Rng,
    x0: Vec<f64>,
    t: usize,
    corner: bool,
) -> Result<Trajectory> {
    let mut w = Vec::with_capacity(t);
    let mut v = Vec::with_capacity(t);
    for _ in 0..t {
        if corner {
            w.push(model.w_set.sample_corner(rng));
            v.push(model.v_set.sample_corner(rng));
        } else {
            w.push(model.w_set.sample_uniform(rng));
            v.push(model.v_set.sample_uniform(rng));
        }
    }
    simulate(model, &x0, &w, &v)
}

/// Brute-force validation: `pairs` seeded random trajectory pairs of length
/// `t_max`, each checked with [`check_ioss`]. Pair `k` draws from the stream
/// `(seed, k)`, so the result does not depend on scheduling.
pub fn validate_certificate(
    model: &SystemModel,
    cert: &IossCertificate,
    pairs: usize,
    t_max: usize,
    seed: u64,
) -> Result<CertificateValidation> {
    use rayon::prelude::*;

    let x0_range = match cert.validity {
        Validity::Global => VALIDATION_X0_RANGE,
        Validity::Local { delta0 } => VALIDATION_X0_RANGE.min(0.5 * delta0 / (model.state_dim() as f64).sqrt()),
    };
    let x0_box = BoxSet::symmetric(model.state_dim(), x0_range);
    let results: Vec<Result<(IossReport, Trajectory, Trajectory)>> = (0..pairs)
        .into_par_iter()
        .map(|k| {
            let mut rng = crate::harness::stream_rng(seed, k as u64);
            let corner = k % 2 == 1;
            let x0 = x0_box.sample_uniform(&mut rng);
            let a = random_trajectory(model, &mut rng, x0, t_max, corner)?;
            let x0 = x0_box.sample_uniform(&mut rng);
            let b = random_trajectory(model, &mut rng, x0, t_max, corner)?;
            let report = check_ioss(model, cert, &a, &b)?;
            Ok((report, a, b))
        })
        .collect();

    let mut out = CertificateValidation {
        pairs,
        violations: 0,
        worst_margin: f64::INFINITY,
        counterexample: None,
    };
    for (k, r) in results.into_iter().enumerate() {
        let (report, a, b) = r?;
        if report.worst_margin < out.worst_margin {
            out.worst_margin = report.worst_margin;
        }
        if !report.holds {
            out.violations += 1;
            if out.counterexample.is_none() {
                out.counterexample = Some(Counterexample {
                    pair: k,
                    t: report.worst_t,
                    margin: report.worst_margin,
                    x1: a.x,
                    w1: a.w,
                    x2: b.x,
                    w2: b.w,
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn contraction() -> SystemModel {
        SystemModel::from_registry("contraction", 0.05, 0.05).unwrap()
    }

    fn zeros(t: usize, d: usize) -> Vec<Vec<f64>> {
        vec![vec![0.0; d]; t]
    }

    #[test]
    fn contraction_rollout() {
        let m = contraction();
        let tr = simulate(&m, &[1.0], &zeros(3, 1), &zeros(3, 1)).unwrap();
        let xs: Vec<f64> = tr.x.iter().map(|x| x[0]).collect();
        assert_eq!(xs, vec![1.0, 0.5, 0.25, 0.125]);
        assert_eq!(tr.y.len(), 3);
        assert_eq!(tr.y[2][0], 0.25);
    }

    #[test]
    fn equilibrium_stays_at_zero() {
        for name in ["contraction", "sin-contraction", "rotation-contraction"] {
            let m = SystemModel::from_registry(name, 0.05, 0.05).unwrap();
            let (n, g, p) = m.builtin().dims();
            let tr = simulate(&m, &vec![0.0; n], &zeros(6, g), &zeros(6, p)).unwrap();
            assert!(tr.x.iter().flatten().chain(tr.y.iter().flatten()).all(|v| *v == 0.0));
        }
    }

    #[test]
    fn simulate_rejects_out_of_box_inputs() {
        let m = contraction();
        let err = simulate(&m, &[0.0], &[vec![0.2]], &[vec![0.0]]).unwrap_err();
        assert!(matches!(err, Error::Constraint(_)));
        let err = simulate(&m, &[0.0], &[vec![0.0]], &[vec![-0.2]]).unwrap_err();
        assert!(matches!(err, Error::Constraint(_)));
    }

    #[test]
    fn pi_sequence_example() {
        let m = contraction();
        let a = simulate(&m, &[1.0], &zeros(3, 1), &zeros(3, 1)).unwrap();
        let b = simulate(&m, &[0.0], &zeros(3, 1), &zeros(3, 1)).unwrap();
        let pi: Vec<f64> = pi_sequence(&m, &a, &b).unwrap().into_iter().map(|p| p[0]).collect();
        assert_eq!(pi, vec![1.0, 0.0, 0.0, 0.0, -1.0, -0.5, -0.25]);
        let same = pi_sequence(&m, &a, &a).unwrap();
        assert!(same.iter().flatten().all(|v| *v == 0.0));
        let short = a.prefix(2).unwrap();
        assert!(matches!(pi_sequence(&m, &a, &short), Err(Error::LengthMismatch { .. })));
        let five = simulate(&m, &[1.0], &zeros(5, 1), &zeros(5, 1)).unwrap();
        assert_eq!(pi_sequence(&m, &five, &five).unwrap().len(), 11);
    }

    #[test]
    fn iota_examples() {
        assert_eq!(iota(0, 3).unwrap(), -1);
        assert_eq!(iota(2, 3).unwrap(), 1);
        assert_eq!(iota(5, 3).unwrap(), 1);
        assert!(matches!(iota(7, 3), Err(Error::Index { .. })));
    }

    #[test]
    fn iota_preimages() {
        for t in 0..12usize {
            let mut counts = vec![0usize; t + 1];
            for i in 0..=2 * t {
                let tau = iota(i, t).unwrap();
                assert!((-1..t as i64).contains(&tau));
                counts[(tau + 1) as usize] += 1;
            }
            assert_eq!(counts[0], 1);
            assert!(counts[1..].iter().all(|c| *c == 2));
        }
    }

    #[test]
    fn identical_pair_has_zero_margin() {
        let m = contraction();
        let cert = m.builtin().certificate();
        let a = simulate(&m, &[0.3], &zeros(8, 1), &zeros(8, 1)).unwrap();
        let r = check_ioss(&m, &cert, &a, &a).unwrap();
        assert!(r.holds);
        assert_eq!(r.worst_margin, 0.0);
    }

    #[test]
    fn exp_form_tracks_family() {
        let cert = Builtin::Contraction.certificate();
        let (c, lambda) = cert.exp_form().unwrap();
        assert!((lambda - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((c - 2.0 / (1.0 - 0.5f64.sqrt())).abs() < 1e-12);
        let quad = IossCertificate::new(BoundFunction::exp_power(1.0, 2.0, 0.5).unwrap(), Validity::Global);
        assert!(quad.exp_form().is_none());
    }

    #[test]
    fn local_validity_is_enforced() {
        let m = contraction();
        let mut cert = m.builtin().certificate();
        cert.validity = Validity::Local { delta0: 0.1 };
        let a = simulate(&m, &[1.0], &zeros(2, 1), &zeros(2, 1)).unwrap();
        let b = simulate(&m, &[0.0], &zeros(2, 1), &zeros(2, 1)).unwrap();
        assert!(matches!(check_ioss(&m, &cert, &a, &b), Err(Error::Domain(_))));
    }

    #[test]
    fn boxes_must_fit_delta() {
        let err = SystemModel::new(
            Builtin::Contraction,
            BoxSet::unbounded(1),
            BoxSet::symmetric(1, 0.1),
            BoxSet::symmetric(1, 0.01),
            0.05,
            0.05,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn csv_columns() {
        let m = SystemModel::from_registry("rotation-contraction", 0.05, 0.05).unwrap();
        let tr = simulate(&m, &[1.0, 0.0], &zeros(2, 2), &zeros(2, 1)).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "t,x0,x1,w0,w1,v0,y0");
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn falsified_rotation_certificate_is_caught() {
        let m = SystemModel::from_registry("rotation-contraction", 0.05, 0.05).unwrap();
        let bad = m.builtin().certificate().with_scaled_rate(0.5).unwrap();
        let r = validate_certificate(&m, &bad, 20, 40, 3).unwrap();
        assert!(r.violations > 0);
        assert!(r.counterexample.is_some());
    }

    proptest! {
        #[test]
        fn pi_antisymmetry(x1 in -1.0f64..1.0, x2 in -1.0f64..1.0, seed in 0u64..1000) {
            let m = SystemModel::from_registry("sin-contraction", 0.05, 0.05).unwrap();
            let mut rng = crate::harness::stream_rng(seed, 0);
            let a = random_trajectory(&m, &mut rng, vec![x1], 6, false).unwrap();
            let b = random_trajectory(&m, &mut rng, vec![x2], 6, false).unwrap();
            let ab = pi_sequence(&m, &a, &b).unwrap();
            let ba = pi_sequence(&m, &b, &a).unwrap();
            for (p, q) in ab.iter().zip(&ba) {
                prop_assert_eq!(p[0], -q[0]);
            }
        }

        #[test]
        fn rollout_residual(x0 in -2.0f64..2.0, seed in 0u64..1000) {
            let m = SystemModel::from_registry("rotation-contraction", 0.05, 0.05).unwrap();
            let mut rng = crate::harness::stream_rng(seed, 1);
            let tr = random_trajectory(&m, &mut rng, vec![x0, -x0], 10, seed % 2 == 0).unwrap();
            for t in 0..tr.len() {
                let next = m.f(&tr.x[t], &tr.w[t]);
                prop_assert!(dist(&next, &tr.x[t + 1]) <= 1e-12);
                prop_assert!((m.h(&tr.x[t])[0] + tr.v[t][0] - tr.y[t][0]).abs() <= 1e-12);
            }
        }
    }
}
