//! Comparison functions and the algebra used by the stability bounds.
//!
//! A [`BoundFunction`] is a KL function `beta(s, tau)`: strictly increasing
//! in `s` with `beta(0, tau) = 0`, nonincreasing in `tau` and vanishing as
//! `tau` grows. Four families are supported:
//!
//! * `ExpPower`: `c * s^a * lambda^tau`
//! * `FracPower`: `c * s^a * (tau + 1)^(-b)`
//! * `SeparableProduct`: `k(s) * l(tau)` with `k(s) = c * s^a`
//! * `Tabulated`: piecewise-linear in `s`, piecewise-constant
//!   (right-continuous) in `tau`.
//!
//! The JSON form is flat, e.g.
//! `{"family":"exp_power","c":2.0,"a":1.0,"lambda":0.5,"s_max":1.0}`.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Default cap on the discount scanned by [`tau_min`].
pub const TAU_CAP: u64 = 1_000_000;

/// Absolute tolerance on `s` for bisection-based inversion.
pub const INVERSE_TOL: f64 = 1e-12;

/// Grid resolution used when a worst case cannot be located analytically.
pub const FEASIBILITY_GRID: usize = 10_000;

/// `a ⊕ b`: the larger of the two.
#[inline]
pub fn oplus(a: f64, b: f64) -> f64 {
    a.max(b)
}

/// K-function descriptor `k(s) = c * s^a`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KFunction {
    Power { c: f64, a: f64 },
}

impl KFunction {
    pub fn eval(&self, s: f64) -> f64 {
        match *self {
            KFunction::Power { c, a } => c * pow(s, a),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            KFunction::Power { c, a } => {
                if !(c > 0.0 && c.is_finite() && a > 0.0 && a.is_finite()) {
                    return Err(Error::Config(format!(
                        "power K-function needs c > 0 and a > 0, got c={c}, a={a}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// L-function descriptor. Also used for the Lipschitz-at-origin slope bound
/// `a(tau)` and for the horizon decay `phi`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LFunction {
    /// `scale * lambda^tau`
    Exp { scale: f64, lambda: f64 },
    /// `scale * (tau + 1)^(-b)`
    Frac { scale: f64, b: f64 },
    /// Right-continuous step function: `values[j]` on `[tau[j], tau[j+1])`,
    /// the last value held beyond the final node.
    Steps { tau: Vec<f64>, values: Vec<f64> },
}

impl LFunction {
    pub fn eval(&self, tau: f64) -> f64 {
        match self {
            LFunction::Exp { scale, lambda } => scale * lambda.powf(tau),
            LFunction::Frac { scale, b } => scale * (tau + 1.0).powf(-b),
            LFunction::Steps { tau: nodes, values } => values[step_index(nodes, tau)],
        }
    }

    /// Multiply by a positive constant.
    pub fn scaled(&self, k: f64) -> LFunction {
        match self {
            LFunction::Exp { scale, lambda } => LFunction::Exp {
                scale: scale * k,
                lambda: *lambda,
            },
            LFunction::Frac { scale, b } => LFunction::Frac {
                scale: scale * k,
                b: *b,
            },
            LFunction::Steps { tau, values } => LFunction::Steps {
                tau: tau.clone(),
                values: values.iter().map(|v| v * k).collect(),
            },
        }
    }

    /// Integer discounts at which the value can change, for step functions.
    fn breakpoints(&self) -> Option<Vec<u64>> {
        match self {
            LFunction::Steps { tau, .. } => Some(integer_breakpoints(tau)),
            _ => None,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            LFunction::Exp { scale, lambda } => {
                if !(*scale > 0.0 && scale.is_finite() && *lambda > 0.0 && *lambda < 1.0) {
                    return Err(Error::Config(format!(
                        "exponential L-function needs scale > 0 and lambda in (0,1), got {scale}, {lambda}"
                    )));
                }
            }
            LFunction::Frac { scale, b } => {
                if !(*scale > 0.0 && scale.is_finite() && *b > 0.0 && b.is_finite()) {
                    return Err(Error::Config(format!(
                        "fractional L-function needs scale > 0 and b > 0, got {scale}, {b}"
                    )));
                }
            }
            LFunction::Steps { tau, values } => {
                if tau.is_empty() || tau.len() != values.len() || tau[0] != 0.0 {
                    return Err(Error::Config(
                        "step L-function needs matching, nonempty node lists starting at tau = 0"
                            .into(),
                    ));
                }
                if tau.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(Error::Config("step L-function nodes must increase".into()));
                }
                if values.iter().any(|v| !(v.is_finite() && *v >= 0.0))
                    || values.windows(2).any(|w| w[1] > w[0])
                {
                    return Err(Error::Config(
                        "step L-function values must be finite, nonnegative and nonincreasing"
                            .into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Gridded KL data. `values[j][i]` is `beta(s[i], tau[j])`.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    s: Vec<f64>,
    tau: Vec<f64>,
    values: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(s: Vec<f64>, tau: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        let bad = |msg: &str| Err(Error::Config(format!("tabulated KL function: {msg}")));
        if s.len() < 2 || s[0] != 0.0 {
            return bad("s grid needs at least two nodes starting at 0");
        }
        if s.windows(2).any(|w| !(w[1] > w[0])) || !s.iter().all(|x| x.is_finite()) {
            return bad("s grid must be finite and strictly increasing");
        }
        if tau.is_empty() || tau[0] != 0.0 {
            return bad("tau grid must start at 0");
        }
        if tau.windows(2).any(|w| !(w[1] > w[0])) || !tau.iter().all(|x| x.is_finite()) {
            return bad("tau grid must be finite and strictly increasing");
        }
        if values.len() != tau.len() || values.iter().any(|row| row.len() != s.len()) {
            return bad("values must be a tau-by-s matrix");
        }
        for row in &values {
            if row[0] != 0.0 {
                return bad("values at s = 0 must be 0");
            }
            if row.windows(2).any(|w| !(w[1] > w[0])) || !row.iter().all(|x| x.is_finite()) {
                return bad("values must be finite and strictly increasing in s");
            }
        }
        for j in 1..tau.len() {
            if (0..s.len()).any(|i| values[j][i] > values[j - 1][i]) {
                return bad("values must be nonincreasing in tau");
            }
        }
        Ok(Self { s, tau, values })
    }

    pub fn s_nodes(&self) -> &[f64] {
        &self.s
    }

    pub fn tau_nodes(&self) -> &[f64] {
        &self.tau
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    fn s_max(&self) -> f64 {
        *self.s.last().expect("validated nonempty")
    }

    fn row_eval(&self, row: &[f64], s: f64) -> f64 {
        let k = self.s.partition_point(|&x| x <= s);
        if k >= self.s.len() {
            return row[self.s.len() - 1];
        }
        let (s0, s1) = (self.s[k - 1], self.s[k]);
        let (v0, v1) = (row[k - 1], row[k]);
        v0 + (v1 - v0) * (s - s0) / (s1 - s0)
    }

    fn eval(&self, s: f64, tau: f64) -> f64 {
        let row = &self.values[step_index(&self.tau, tau)];
        self.row_eval(row, s)
    }
}

/// Family of a [`BoundFunction`].
#[derive(Clone, Debug, PartialEq)]
pub enum Family {
    ExpPower { c: f64, a: f64, lambda: f64 },
    FracPower { c: f64, a: f64, b: f64 },
    SeparableProduct { k: KFunction, l: LFunction },
    Tabulated(Table),
}

/// A KL comparison function with its domain `[0, s_max]` (unbounded when
/// `s_max` is `None`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BoundFunctionRepr", into = "BoundFunctionRepr")]
pub struct BoundFunction {
    family: Family,
    s_max: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
enum BoundFunctionRepr {
    ExpPower {
        c: f64,
        a: f64,
        lambda: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        s_max: Option<f64>,
    },
    FracPower {
        c: f64,
        a: f64,
        b: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        s_max: Option<f64>,
    },
    SeparableProduct {
        k: KFunction,
        l: LFunction,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        s_max: Option<f64>,
    },
    Tabulated {
        s: Vec<f64>,
        tau: Vec<f64>,
        values: Vec<Vec<f64>>,
    },
}

impl TryFrom<BoundFunctionRepr> for BoundFunction {
    type Error = Error;

    fn try_from(repr: BoundFunctionRepr) -> Result<Self> {
        match repr {
            BoundFunctionRepr::ExpPower { c, a, lambda, s_max } => {
                BoundFunction::exp_power(c, a, lambda)?.with_s_max(s_max)
            }
            BoundFunctionRepr::FracPower { c, a, b, s_max } => {
                BoundFunction::frac_power(c, a, b)?.with_s_max(s_max)
            }
            BoundFunctionRepr::SeparableProduct { k, l, s_max } => {
                BoundFunction::separable(k, l)?.with_s_max(s_max)
            }
            BoundFunctionRepr::Tabulated { s, tau, values } => {
                Ok(BoundFunction::tabulated(Table::new(s, tau, values)?))
            }
        }
    }
}

impl From<BoundFunction> for BoundFunctionRepr {
    fn from(f: BoundFunction) -> Self {
        let s_max = f.s_max;
        match f.family {
            Family::ExpPower { c, a, lambda } => BoundFunctionRepr::ExpPower { c, a, lambda, s_max },
            Family::FracPower { c, a, b } => BoundFunctionRepr::FracPower { c, a, b, s_max },
            Family::SeparableProduct { k, l } => BoundFunctionRepr::SeparableProduct { k, l, s_max },
            Family::Tabulated(t) => BoundFunctionRepr::Tabulated {
                s: t.s,
                tau: t.tau,
                values: t.values,
            },
        }
    }
}

impl BoundFunction {
    /// `c * s^a * lambda^tau` on an unbounded domain.
    pub fn exp_power(c: f64, a: f64, lambda: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite() && a >= 1.0 && a.is_finite() && lambda > 0.0 && lambda < 1.0)
        {
            return Err(Error::Config(format!(
                "exp_power needs c > 0, a >= 1, lambda in (0,1); got c={c}, a={a}, lambda={lambda}"
            )));
        }
        Ok(Self {
            family: Family::ExpPower { c, a, lambda },
            s_max: None,
        })
    }

    /// `c * s^a * (tau + 1)^(-b)` on an unbounded domain.
    pub fn frac_power(c: f64, a: f64, b: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite() && a >= 1.0 && a.is_finite() && b > 0.0 && b.is_finite()) {
            return Err(Error::Config(format!(
                "frac_power needs c > 0, a >= 1, b > 0; got c={c}, a={a}, b={b}"
            )));
        }
        Ok(Self {
            family: Family::FracPower { c, a, b },
            s_max: None,
        })
    }

    pub fn separable(k: KFunction, l: LFunction) -> Result<Self> {
        k.validate()?;
        l.validate()?;
        if let LFunction::Steps { values, .. } = &l {
            if values[0] <= 0.0 {
                return Err(Error::Config("L-function must be positive at tau = 0".into()));
            }
        }
        Ok(Self {
            family: Family::SeparableProduct { k, l },
            s_max: None,
        })
    }

    /// Tabulated data; the domain is the extent of the `s` grid.
    pub fn tabulated(table: Table) -> Self {
        let s_max = Some(table.s_max());
        Self {
            family: Family::Tabulated(table),
            s_max,
        }
    }

    /// Restrict (or, with `None`, lift) the domain bound. Tabulated data keep
    /// their grid extent as an upper limit.
    pub fn with_s_max(mut self, s_max: Option<f64>) -> Result<Self> {
        if let Some(m) = s_max {
            if !(m > 0.0) {
                return Err(Error::Config(format!("s_max must be positive, got {m}")));
            }
        }
        self.s_max = match (&self.family, s_max) {
            (Family::Tabulated(t), None) => Some(t.s_max()),
            (Family::Tabulated(t), Some(m)) if m > t.s_max() => {
                return Err(Error::Config(format!(
                    "s_max {m} exceeds the tabulated grid extent {}",
                    t.s_max()
                )))
            }
            (_, m) => m,
        };
        Ok(self)
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn s_max(&self) -> Option<f64> {
        self.s_max
    }

    /// `(c, lambda)` when the function is `c * s * lambda^tau`.
    pub fn exp_form(&self) -> Option<(f64, f64)> {
        match self.family {
            Family::ExpPower { c, a, lambda } if a == 1.0 => Some((c, lambda)),
            _ => None,
        }
    }

    /// `kappa(tau)` when the function is `kappa(tau) * s` (linear in `s`).
    pub fn linear_gain(&self) -> Option<LFunction> {
        match &self.family {
            Family::ExpPower { c, a, lambda } if *a == 1.0 => Some(LFunction::Exp {
                scale: *c,
                lambda: *lambda,
            }),
            Family::FracPower { c, a, b } if *a == 1.0 => Some(LFunction::Frac { scale: *c, b: *b }),
            Family::SeparableProduct {
                k: KFunction::Power { c, a },
                l,
            } if *a == 1.0 => Some(l.scaled(*c)),
            _ => None,
        }
    }

    /// The function `s -> self(scale * s, tau)`, with the domain shrunk to match.
    pub fn prescaled(&self, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Config(format!("prescale must be positive, got {scale}")));
        }
        let family = match &self.family {
            Family::ExpPower { c, a, lambda } => Family::ExpPower {
                c: c * scale.powf(*a),
                a: *a,
                lambda: *lambda,
            },
            Family::FracPower { c, a, b } => Family::FracPower {
                c: c * scale.powf(*a),
                a: *a,
                b: *b,
            },
            Family::SeparableProduct {
                k: KFunction::Power { c, a },
                l,
            } => Family::SeparableProduct {
                k: KFunction::Power {
                    c: c * scale.powf(*a),
                    a: *a,
                },
                l: l.clone(),
            },
            Family::Tabulated(t) => Family::Tabulated(Table {
                s: t.s.iter().map(|s| s / scale).collect(),
                tau: t.tau.clone(),
                values: t.values.clone(),
            }),
        };
        Ok(Self {
            family,
            s_max: self.s_max.map(|m| m / scale),
        })
    }

    fn check_s(&self, s: f64) -> Result<()> {
        if !(s >= 0.0) || s.is_infinite() {
            return Err(Error::Domain(format!("argument s = {s} must be finite and nonnegative")));
        }
        if let Some(m) = self.s_max {
            if s > m {
                return Err(Error::Domain(format!("argument s = {s} exceeds s_max = {m}")));
            }
        }
        Ok(())
    }

    /// `beta(s, tau)`.
    pub fn eval(&self, s: f64, tau: f64) -> Result<f64> {
        self.check_s(s)?;
        if !(tau >= 0.0) {
            return Err(Error::Domain(format!("discount tau = {tau} must be nonnegative")));
        }
        Ok(self.eval_unchecked(s, tau))
    }

    /// Evaluation without domain checks. Callers guarantee `s` and `tau` are
    /// in range.
    pub(crate) fn eval_unchecked(&self, s: f64, tau: f64) -> f64 {
        match &self.family {
            Family::ExpPower { c, a, lambda } => c * pow(s, *a) * lambda.powf(tau),
            Family::FracPower { c, a, b } => c * pow(s, *a) * (tau + 1.0).powf(-b),
            Family::SeparableProduct { k, l } => k.eval(s) * l.eval(tau),
            Family::Tabulated(t) => t.eval(s, tau),
        }
    }

    /// The `s` solving `beta(s, tau) = v`.
    pub fn inverse_first_arg(&self, v: f64, tau: f64) -> Result<f64> {
        if !(v >= 0.0) || v.is_infinite() {
            return Err(Error::Domain(format!("value v = {v} must be finite and nonnegative")));
        }
        if !(tau >= 0.0) {
            return Err(Error::Domain(format!("discount tau = {tau} must be nonnegative")));
        }
        if v == 0.0 {
            return Ok(0.0);
        }
        if let Some(m) = self.s_max {
            let top = self.eval_unchecked(m, tau);
            if v > top {
                return Err(Error::Range(format!(
                    "value {v} exceeds beta(s_max, tau) = {top} at tau = {tau}"
                )));
            }
        }
        let gain = match &self.family {
            Family::ExpPower { c, a, lambda } => Some((c * lambda.powf(tau), *a)),
            Family::FracPower { c, a, b } => Some((c * (tau + 1.0).powf(-b), *a)),
            Family::SeparableProduct {
                k: KFunction::Power { c, a },
                l,
            } => Some((c * l.eval(tau), *a)),
            Family::Tabulated(_) => None,
        };
        match gain {
            Some((g, a)) => {
                if !(g > 0.0) {
                    return Err(Error::Range(format!(
                        "beta(., {tau}) vanishes identically; cannot invert {v}"
                    )));
                }
                let s = (v / g).powf(1.0 / a);
                Ok(match self.s_max {
                    Some(m) => s.min(m),
                    None => s,
                })
            }
            None => {
                let hi = self.s_max.expect("tabulated functions are bounded");
                Ok(bisect_increasing(|s| self.eval_unchecked(s, tau), v, 0.0, hi))
            }
        }
    }

    /// Discounts (integers) at which the function can change in `tau`; `None`
    /// for strictly decaying families.
    fn tau_breakpoints(&self) -> Option<Vec<u64>> {
        match &self.family {
            Family::Tabulated(t) => Some(integer_breakpoints(&t.tau)),
            Family::SeparableProduct { l, .. } => l.breakpoints(),
            _ => None,
        }
    }
}

/// Pointwise maximum of discounted terms, the shape of the right-hand sides
/// of the i-IOSS and robust-stability inequalities. Term `i` is evaluated at
/// discount `t - offset_i`.
#[derive(Clone, Debug, Default)]
pub struct MaxCombination {
    pub terms: Vec<(BoundFunction, i64)>,
}

impl MaxCombination {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, f: BoundFunction, offset: i64) {
        self.terms.push((f, offset));
    }

    /// `max_i f_i(s_i, t - offset_i)`; an empty combination evaluates to 0.
    pub fn eval(&self, s: &[f64], t: i64) -> Result<f64> {
        if s.len() != self.terms.len() {
            return Err(Error::LengthMismatch {
                expected: self.terms.len(),
                got: s.len(),
            });
        }
        let mut out = 0.0_f64;
        for ((f, off), &si) in self.terms.iter().zip(s) {
            out = oplus(out, f.eval(si, (t - off) as f64)?);
        }
        Ok(out)
    }
}

/// `f^{∘n}(g_value, t)`: `n` applications of `f(., t)` starting at `g_value`.
pub fn compose_n(f: &BoundFunction, g_value: f64, t: f64, n: u64) -> Result<f64> {
    let mut v = g_value;
    if n == 0 {
        f.check_s(v)?;
    }
    for _ in 0..n {
        v = f.eval(v, t)?;
    }
    Ok(v)
}

/// Slope bound `a(tau)` with `beta(s, tau) <= a(tau) * s` on `[0, s_high]`.
///
/// Parametric families with `a >= 1` give `c * s_high^(a-1)` times their
/// decay (exact for `a = 1`). For tabulated data the bound is the supremum of
/// `beta(s, tau) / s` over the interpolant, which is attained at grid nodes or
/// `s_high`; the data are reported as not Lipschitz at the origin when the
/// first two positive nodes grow sublinearly (power-law exponent below one),
/// since the tabulated shape then has an unbounded ratio near zero.
pub fn lipschitz_at_origin(beta: &BoundFunction, s_high: f64) -> Option<LFunction> {
    if !(s_high > 0.0) {
        return None;
    }
    match &beta.family {
        Family::ExpPower { c, a, lambda } => Some(LFunction::Exp {
            scale: c * s_high.powf(a - 1.0),
            lambda: *lambda,
        }),
        Family::FracPower { c, a, b } => Some(LFunction::Frac {
            scale: c * s_high.powf(a - 1.0),
            b: *b,
        }),
        Family::SeparableProduct {
            k: KFunction::Power { c, a },
            l,
        } => (*a >= 1.0).then(|| l.scaled(c * s_high.powf(a - 1.0))),
        Family::Tabulated(t) => {
            let s_high = s_high.min(t.s_max());
            let mut slopes = Vec::with_capacity(t.tau.len());
            for row in &t.values {
                let (s1, s2) = (t.s[1], t.s.get(2).copied());
                if let Some(s2) = s2 {
                    let (f1, f2) = (row[1], row[2]);
                    let exponent = (f2 / f1).ln() / (s2 / s1).ln();
                    if exponent < 1.0 - 1e-9 {
                        return None;
                    }
                }
                let mut best = row[1] / s1;
                for i in 2..t.s.len() {
                    if t.s[i] > s_high {
                        break;
                    }
                    best = best.max(row[i] / t.s[i]);
                }
                best = best.max(t.row_eval(row, s_high) / s_high);
                slopes.push(best);
            }
            Some(LFunction::Steps {
                tau: t.tau.clone(),
                values: slopes,
            })
        }
    }
}

/// Smallest integer discount `tau` with `beta(s, tau) <= eta * s` for all
/// `s` in `[s_low, s_high]`, scanning upward from zero.
pub fn tau_min(beta: &BoundFunction, eta: f64, s_low: f64, s_high: f64) -> Result<u64> {
    tau_min_with_cap(beta, eta, s_low, s_high, TAU_CAP)
}

pub fn tau_min_with_cap(
    beta: &BoundFunction,
    eta: f64,
    s_low: f64,
    s_high: f64,
    cap: u64,
) -> Result<u64> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::Precondition(format!("eta = {eta} must lie in (0,1)")));
    }
    if !(s_low >= 0.0 && s_high > 0.0 && s_low <= s_high) {
        return Err(Error::Precondition(format!(
            "need 0 <= s_low <= s_high and s_high > 0, got [{s_low}, {s_high}]"
        )));
    }
    beta.check_s(s_high)?;

    let breakpoints = beta.tau_breakpoints();
    if s_low == 0.0 {
        let slope = lipschitz_at_origin(beta, s_high).ok_or_else(|| {
            Error::Precondition(
                "s_low = 0 requires beta(., 0) to be Lipschitz at the origin".into(),
            )
        })?;
        return scan(cap, breakpoints, |tau| slope.eval(tau as f64) <= eta);
    }

    let feasible = |tau: u64| -> bool {
        let tau = tau as f64;
        let ok = |s: f64| beta.eval_unchecked(s, tau) <= eta * s;
        match &beta.family {
            // beta(s, tau) / s is monotone in s, so only the endpoints matter
            Family::ExpPower { .. } | Family::FracPower { .. } | Family::SeparableProduct { .. } => {
                ok(s_low) && ok(s_high)
            }
            Family::Tabulated(t) => {
                if !(ok(s_low) && ok(s_high)) {
                    return false;
                }
                if t.s.iter().any(|&s| s > s_low && s < s_high && !ok(s)) {
                    return false;
                }
                let step = (s_high - s_low) / FEASIBILITY_GRID as f64;
                (1..FEASIBILITY_GRID).all(|k| ok(s_low + step * k as f64))
            }
        }
    };
    scan(cap, breakpoints, feasible)
}

/// `min{tau : beta(s_high, tau) <= eta * s_low}`, an upper bound on
/// [`tau_min`] whenever `s_low > 0`.
pub fn tau_upper_bound(beta: &BoundFunction, eta: f64, s_low: f64, s_high: f64) -> Result<u64> {
    if !(s_low > 0.0) {
        return Err(Error::Precondition("the upper bound needs s_low > 0".into()));
    }
    beta.check_s(s_high)?;
    scan(TAU_CAP, beta.tau_breakpoints(), |tau| {
        beta.eval_unchecked(s_high, tau as f64) <= eta * s_low
    })
}

fn scan(cap: u64, breakpoints: Option<Vec<u64>>, feasible: impl Fn(u64) -> bool) -> Result<u64> {
    match breakpoints {
        // piecewise constant in tau: only the breakpoints need testing
        Some(points) => {
            for tau in points.into_iter().filter(|&t| t <= cap) {
                if feasible(tau) {
                    return Ok(tau);
                }
            }
        }
        None => {
            for tau in 0..=cap {
                if feasible(tau) {
                    return Ok(tau);
                }
            }
        }
    }
    Err(Error::IterationLimit(format!(
        "no discount up to {cap} contracts the function"
    )))
}

fn integer_breakpoints(nodes: &[f64]) -> Vec<u64> {
    let mut out: Vec<u64> = nodes.iter().map(|t| t.ceil() as u64).collect();
    out.dedup();
    out
}

fn step_index(nodes: &[f64], tau: f64) -> usize {
    nodes.partition_point(|&x| x <= tau).saturating_sub(1)
}

fn pow(s: f64, a: f64) -> f64 {
    if a == 1.0 {
        s
    } else {
        s.powf(a)
    }
}

fn bisect_increasing(f: impl Fn(f64) -> f64, target: f64, mut lo: f64, mut hi: f64) -> f64 {
    while hi - lo > INVERSE_TOL {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn exp(c: f64, a: f64, l: f64) -> BoundFunction {
        BoundFunction::exp_power(c, a, l).unwrap()
    }

    fn sqrt_table() -> BoundFunction {
        let s: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        let row: Vec<f64> = s.iter().map(|x| x.sqrt()).collect();
        let half: Vec<f64> = row.iter().map(|v| 0.5 * v).collect();
        BoundFunction::tabulated(Table::new(s, vec![0.0, 3.0], vec![row, half]).unwrap())
    }

    fn linear_table() -> BoundFunction {
        let s: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let rows: Vec<Vec<f64>> = (0..5)
            .map(|j| s.iter().map(|x| 2.0 * x * 0.5f64.powi(j)).collect())
            .collect();
        BoundFunction::tabulated(Table::new(s, vec![0.0, 1.0, 2.0, 3.0, 4.0], rows).unwrap())
    }

    #[test]
    fn eval_examples() {
        assert_eq!(exp(2.0, 1.0, 0.5).eval(1.0, 2.0).unwrap(), 0.5);
        let frac = BoundFunction::frac_power(2.0, 1.0, 1.0).unwrap();
        assert_eq!(frac.eval(1.0, 3.0).unwrap(), 0.5);
        for f in [exp(2.0, 1.0, 0.5), frac, sqrt_table(), linear_table()] {
            assert_eq!(f.eval(0.0, 7.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn eval_outside_domain() {
        let f = exp(2.0, 1.0, 0.5).with_s_max(Some(1.0)).unwrap();
        assert!(matches!(f.eval(1.5, 0.0), Err(Error::Domain(_))));
        assert!(matches!(f.eval(-0.1, 0.0), Err(Error::Domain(_))));
        assert!(matches!(f.eval(0.5, -1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn oplus_examples() {
        assert_eq!(oplus(3.0, 5.0), 5.0);
        assert_eq!(oplus(0.7, 0.7), 0.7);
        let alpha = exp(1.0, 1.0, 0.5);
        let lhs = alpha.eval(oplus(0.2, 0.7), 0.0).unwrap();
        let rhs = oplus(alpha.eval(0.2, 0.0).unwrap(), alpha.eval(0.7, 0.0).unwrap());
        assert_eq!(lhs, 0.7);
        assert_eq!(rhs, 0.7);
    }

    #[test]
    fn compose_examples() {
        let f = exp(2.0, 1.0, 0.5);
        assert_eq!(compose_n(&f, 1.0, 2.0, 0).unwrap(), 1.0);
        assert_eq!(compose_n(&f, 1.0, 2.0, 2).unwrap(), 0.25);
        assert_eq!(compose_n(&exp(1.0, 1.0, 0.5), 0.0, 5.0, 9).unwrap(), 0.0);
    }

    #[test]
    fn compose_leaving_domain_fails() {
        let f = exp(4.0, 1.0, 0.9).with_s_max(Some(1.0)).unwrap();
        assert!(matches!(compose_n(&f, 0.5, 0.0, 3), Err(Error::Domain(_))));
    }

    #[test]
    fn inverse_examples() {
        assert_eq!(exp(2.0, 1.0, 0.5).inverse_first_arg(0.5, 2.0).unwrap(), 1.0);
        assert_eq!(sqrt_table().inverse_first_arg(0.0, 1.0).unwrap(), 0.0);
        let bounded = exp(2.0, 1.0, 0.5).with_s_max(Some(1.0)).unwrap();
        assert!(matches!(bounded.inverse_first_arg(3.0, 0.0), Err(Error::Range(_))));
    }

    #[test]
    fn tau_min_examples() {
        assert_eq!(tau_min(&exp(2.0, 1.0, 0.5), 0.5, 0.0, 1.0).unwrap(), 2);
        assert_eq!(tau_min(&exp(0.4, 1.0, 0.5), 0.5, 0.0, 1.0).unwrap(), 0);
    }

    #[test]
    fn tau_min_requires_lipschitz_at_zero() {
        let err = tau_min(&sqrt_table(), 0.5, 0.0, 1.0).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
        // away from the origin the tabulated square root does contract
        let tau = tau_min(&sqrt_table(), 0.9, 0.5, 1.0).unwrap();
        assert_eq!(tau, 3);
    }

    #[test]
    fn tau_min_iteration_limit() {
        // steps hold their last value, which never contracts here
        let f = BoundFunction::separable(
            KFunction::Power { c: 1.0, a: 1.0 },
            LFunction::Steps {
                tau: vec![0.0, 2.0],
                values: vec![3.0, 2.0],
            },
        )
        .unwrap();
        assert!(matches!(
            tau_min(&f, 0.5, 0.0, 1.0),
            Err(Error::IterationLimit(_))
        ));
        assert!(matches!(
            tau_min_with_cap(&exp(100.0, 1.0, 0.99), 0.5, 0.0, 1.0, 10),
            Err(Error::IterationLimit(_))
        ));
    }

    #[test]
    fn tau_min_bounded_by_tau_bar() {
        let f = exp(3.0, 1.5, 0.8);
        let t = tau_min(&f, 0.4, 0.2, 2.0).unwrap();
        let bar = tau_upper_bound(&f, 0.4, 0.2, 2.0).unwrap();
        assert!(t <= bar);
    }

    #[test]
    fn lipschitz_examples() {
        match lipschitz_at_origin(&exp(2.0, 1.0, 0.5), 1.0).unwrap() {
            LFunction::Exp { scale, lambda } => {
                assert_eq!(scale, 2.0);
                assert_eq!(lambda, 0.5);
            }
            other => panic!("unexpected {other:?}"),
        }
        let a = lipschitz_at_origin(&exp(1.0, 2.0, 0.5), 1.0).unwrap();
        assert_eq!(a.eval(3.0), 0.125);
        assert!(lipschitz_at_origin(&sqrt_table(), 1.0).is_none());
        let lin = lipschitz_at_origin(&linear_table(), 1.0).unwrap();
        assert!((lin.eval(0.0) - 2.0).abs() < 1e-12);
        assert!((lin.eval(2.5) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn tabulated_rejects_non_monotone_data() {
        let s = vec![0.0, 0.5, 1.0];
        assert!(Table::new(s.clone(), vec![0.0], vec![vec![0.0, 1.0, 0.9]]).is_err());
        assert!(Table::new(
            s.clone(),
            vec![0.0, 1.0],
            vec![vec![0.0, 1.0, 2.0], vec![0.0, 1.5, 2.0]]
        )
        .is_err());
        assert!(Table::new(s, vec![0.0], vec![vec![0.1, 1.0, 2.0]]).is_err());
    }

    #[test]
    fn tabulated_interpolation() {
        let f = linear_table();
        assert!((f.eval(0.35, 0.0).unwrap() - 0.7).abs() < 1e-12);
        // right-continuous steps in tau
        assert!((f.eval(0.35, 1.0).unwrap() - 0.35).abs() < 1e-12);
        assert!((f.eval(0.35, 1.99).unwrap() - 0.35).abs() < 1e-12);
    }

    #[test]
    fn json_schema() {
        let f: BoundFunction = serde_json::from_str(
            r#"{"family":"exp_power","c":2.0,"a":1.0,"lambda":0.5,"s_max":1.0}"#,
        )
        .unwrap();
        assert_eq!(f.exp_form(), Some((2.0, 0.5)));
        assert_eq!(f.s_max(), Some(1.0));
        let back: BoundFunction = serde_json::from_str(&serde_json::to_string(&f).unwrap()).unwrap();
        assert_eq!(back, f);
        assert!(serde_json::from_str::<BoundFunction>(
            r#"{"family":"exp_power","c":2.0,"a":1.0,"lambda":0.5,"bogus":1}"#
        )
        .is_err());
        assert!(serde_json::from_str::<BoundFunction>(
            r#"{"family":"exp_power","c":2.0,"a":1.0,"lambda":1.5}"#
        )
        .is_err());
    }

    #[test]
    fn max_combination_is_pointwise_max() {
        let mut m = MaxCombination::new();
        m.push(exp(2.0, 1.0, 0.5), 0);
        m.push(exp(1.0, 1.0, 0.5), 2);
        // 2 * 1 * 0.25 vs 1 * 1 * 1
        assert_eq!(m.eval(&[1.0, 1.0], 2).unwrap(), 1.0);
        assert!(m.eval(&[1.0], 2).is_err());
    }

    fn parametric() -> impl Strategy<Value = BoundFunction> {
        prop_oneof![
            (0.1f64..5.0, 1.0f64..3.0, 0.05f64..0.95)
                .prop_map(|(c, a, l)| BoundFunction::exp_power(c, a, l).unwrap()),
            (0.1f64..5.0, 1.0f64..3.0, 0.5f64..3.0)
                .prop_map(|(c, a, b)| BoundFunction::frac_power(c, a, b).unwrap()),
        ]
    }

    proptest! {
        #[test]
        fn k_monotone(f in parametric(), s1 in 0.0f64..10.0, ds in 1e-6f64..5.0, tau in 0.0f64..20.0) {
            prop_assert!(f.eval(s1, tau).unwrap() < f.eval(s1 + ds, tau).unwrap());
        }

        #[test]
        fn l_decay(f in parametric(), s in 0.01f64..10.0, tau in 0.0f64..50.0) {
            let v0 = f.eval(s, 0.0).unwrap();
            prop_assert!(f.eval(s, tau + 1.0).unwrap() <= f.eval(s, tau).unwrap());
            let mut t = 1.0;
            while f.eval(s, t).unwrap() >= 1e-3 * v0 {
                t *= 2.0;
                prop_assert!(t < 1e12);
            }
        }

        #[test]
        fn inverse_round_trip(f in parametric(), v in 0.0f64..10.0, tau in 0.0f64..20.0) {
            let s = f.inverse_first_arg(v, tau).unwrap();
            prop_assert!((f.eval(s, tau).unwrap() - v).abs() <= 1e-10 * (1.0 + v));
        }

        #[test]
        fn tabulated_inverse_round_trip(v in 0.0f64..2.0, tau in 0.0f64..6.0) {
            let f = linear_table();
            let top = f.eval(1.0, tau).unwrap();
            let v = v.min(top);
            let s = f.inverse_first_arg(v, tau).unwrap();
            prop_assert!((f.eval(s, tau).unwrap() - v).abs() <= 1e-10);
        }

        #[test]
        fn compose_telescopes(s in 0.0f64..3.0, m in 0u64..5, n in 0u64..5, t in 0.0f64..4.0) {
            let f = BoundFunction::exp_power(1.5, 1.0, 0.6).unwrap();
            let whole = compose_n(&f, s, t, m + n).unwrap();
            let split = compose_n(&f, compose_n(&f, s, t, n).unwrap(), t, m).unwrap();
            prop_assert!((whole - split).abs() <= 1e-12 * (1.0 + whole));
        }

        #[test]
        fn oplus_distributes(a in 0.0f64..10.0, b in 0.0f64..10.0, tau in 0.0f64..5.0) {
            let f = BoundFunction::exp_power(2.0, 1.3, 0.7).unwrap();
            let lhs = f.eval(oplus(a, b), tau).unwrap();
            let rhs = oplus(f.eval(a, tau).unwrap(), f.eval(b, tau).unwrap());
            prop_assert_eq!(lhs, rhs);
        }
    }
}
