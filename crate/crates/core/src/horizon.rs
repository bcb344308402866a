//! Sufficient horizon sizes for moving-horizon estimation and the bound
//! functions that come with them.

use serde::{Deserialize, Serialize};

use crate::kl::{tau_min, BoundFunction, LFunction};
use crate::{Error, Result};

/// Distance below which a real is treated as the nearby integer before
/// `floor` or `ceil`, so that `log_0.5(0.25)` rounds to 2 and not 3.
const SNAP: f64 = 1e-9;

fn snap(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() < SNAP {
        r
    } else {
        x
    }
}

fn floor_snapped(x: f64) -> f64 {
    snap(x).floor()
}

fn ceil_snapped(x: f64) -> f64 {
    snap(x).ceil()
}

/// How a horizon was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HorizonMethod {
    RgesFormula,
    TauMin,
    ClosedFormExp,
    ClosedFormFrac,
}

/// Result of the monotonicity analysis of the bound factor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Monotonicity {
    pub condition_holds: bool,
    #[serde(rename = "threshold_T")]
    pub threshold: f64,
}

/// A computed horizon with the inputs that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonReport {
    #[serde(rename = "T_min")]
    pub t_min: usize,
    pub method: HorizonMethod,
    /// Unclamped value of a closed-form expression.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<f64>,
    pub inputs: serde_json::Map<String, serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monotonicity: Option<Monotonicity>,
}

fn check_rate(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::Precondition(format!("lambda = {lambda} must lie in (0,1)")));
    }
    Ok(())
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::Precondition(format!("eta = {eta} must lie in (0,1)")));
    }
    Ok(())
}

/// Horizon making MHE robustly globally exponentially stable when the
/// full-information error obeys `c_x s lambda^t`:
/// `max(1, floor(log_lambda(1 / c_x)) + 1)`, and 1 when `c_x <= 1`.
pub fn rges_min_horizon(c_x: f64, lambda: f64) -> Result<usize> {
    check_rate(lambda)?;
    if !(c_x > 0.0 && c_x.is_finite()) {
        return Err(Error::Precondition(format!("c_x = {c_x} must be positive")));
    }
    if c_x <= 1.0 {
        return Ok(1);
    }
    let raw = floor_snapped((1.0 / c_x).ln() / lambda.ln()) + 1.0;
    let horizon = raw.max(1.0) as usize;
    // c_x^(floor(t/T)) lambda^t <= (c_x^(1/T) lambda)^t <= 1
    let rate = c_x.powf(1.0 / horizon as f64) * lambda;
    assert!(rate <= 1.0 + 1e-12, "horizon {horizon} does not contract: {rate}");
    Ok(horizon)
}

/// `max(1, tau_min(beta_x, eta, epsilon / eta, s_bar))`. With `epsilon = 0`
/// the bound must be Lipschitz at the origin.
pub fn ras_min_horizon(beta_x: &BoundFunction, eta: f64, epsilon: f64, s_bar: f64) -> Result<usize> {
    check_eta(eta)?;
    if !(s_bar > 0.0) {
        return Err(Error::Precondition(format!("s_bar = {s_bar} must be positive")));
    }
    if !(epsilon >= 0.0) {
        return Err(Error::Precondition(format!("epsilon = {epsilon} must be nonnegative")));
    }
    if epsilon > eta * s_bar * (1.0 + 1e-12) {
        return Err(Error::Precondition(format!(
            "epsilon = {epsilon} exceeds eta * s_bar = {}",
            eta * s_bar
        )));
    }
    let s_low = (epsilon / eta).min(s_bar);
    Ok(tau_min(beta_x, eta, s_low, s_bar)?.max(1) as usize)
}

/// Parametric full-information bounds with closed-form horizons.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClosedFormFamily {
    /// `c s^a b^tau`
    Exp { c: f64, a: f64, b: f64 },
    /// `c s^a (tau + 1)^(-b)`
    Frac { c: f64, a: f64, b: f64 },
}

impl ClosedFormFamily {
    pub fn bound_function(&self) -> Result<BoundFunction> {
        match *self {
            ClosedFormFamily::Exp { c, a, b } => BoundFunction::exp_power(c, a, b),
            ClosedFormFamily::Frac { c, a, b } => BoundFunction::frac_power(c, a, b),
        }
    }
}

/// Closed-form horizon and its unclamped value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClosedForm {
    pub horizon: usize,
    pub raw: f64,
}

/// `ceil(log_b(eta / (c s_bar^(a-1))))` or `ceil((c s_bar^(a-1) / eta)^(1/b) - 1)`,
/// clamped at 0 and reported as at least 1.
pub fn closed_form_horizon(family: ClosedFormFamily, eta: f64, s_bar: f64) -> Result<ClosedForm> {
    check_eta(eta)?;
    if !(s_bar > 0.0 && s_bar.is_finite()) {
        return Err(Error::Precondition(format!("s_bar = {s_bar} must be positive")));
    }
    let raw = match family {
        ClosedFormFamily::Exp { c, a, b } => {
            if !(c > 0.0 && a >= 1.0 && b > 0.0 && b < 1.0) {
                return Err(Error::Precondition(format!(
                    "exponential family needs c > 0, a >= 1, b in (0,1); got {c}, {a}, {b}"
                )));
            }
            ceil_snapped((eta / (c * s_bar.powf(a - 1.0))).ln() / b.ln())
        }
        ClosedFormFamily::Frac { c, a, b } => {
            if !(c > 0.0 && a >= 1.0 && b > 0.0) {
                return Err(Error::Precondition(format!(
                    "fractional family needs c > 0, a >= 1, b > 0; got {c}, {a}, {b}"
                )));
            }
            ceil_snapped((c * s_bar.powf(a - 1.0) / eta).powf(1.0 / b) - 1.0)
        }
    };
    let clamped = raw.max(0.0);
    Ok(ClosedForm {
        horizon: clamped.max(1.0) as usize,
        raw,
    })
}

/// Radius of the region the uncertainties can reach:
/// `beta_x(delta0, 0) ⊕ beta_w(delta_w, 0) ⊕ beta_v(delta_v, 0)`.
pub fn envelope(
    beta_x: &BoundFunction,
    beta_w: &BoundFunction,
    beta_v: &BoundFunction,
    delta0: f64,
    delta_w: f64,
    delta_v: f64,
) -> Result<f64> {
    for (d, label) in [(delta0, "delta0"), (delta_w, "delta_w"), (delta_v, "delta_v")] {
        if !(d >= 0.0 && d.is_finite()) {
            return Err(Error::Precondition(format!(
                "{label} = {d} must be finite and nonnegative to bound the uncertainty region"
            )));
        }
    }
    Ok(beta_x
        .eval(delta0, 0.0)?
        .max(beta_w.eval(delta_w, 0.0)?)
        .max(beta_v.eval(delta_v, 0.0)?))
}

/// Exponential error bounds of MHE with horizon `T`, composed from the
/// full-information constants `c_x, c_w, c_v` and rate `lambda`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RgesBounds {
    pub c_x: f64,
    pub c_w: f64,
    pub c_v: f64,
    pub lambda: f64,
    pub horizon: usize,
}

/// Build the MHE bound maps for horizon `T >= 1`.
pub fn rges_bound_functions(c_x: f64, c_w: f64, c_v: f64, lambda: f64, horizon: usize) -> Result<RgesBounds> {
    check_rate(lambda)?;
    if horizon == 0 {
        return Err(Error::Precondition("horizon must be at least 1".into()));
    }
    for (c, label) in [(c_x, "c_x"), (c_w, "c_w"), (c_v, "c_v")] {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::Precondition(format!("{label} = {c} must be positive")));
        }
    }
    Ok(RgesBounds {
        c_x,
        c_w,
        c_v,
        lambda,
        horizon,
    })
}

impl RgesBounds {
    /// `c_x^(floor(t/T) + 1) s lambda^t`
    pub fn beta_x(&self, s: f64, t: usize) -> f64 {
        self.c_x.powi((t / self.horizon) as i32 + 1) * s * self.lambda.powi(t as i32)
    }

    fn gap_term(&self, c: f64, s: f64, t: usize, tau: usize) -> f64 {
        assert!(tau < t, "disturbance index {tau} must precede t = {t}");
        let gap = t - tau;
        self.c_x.powi((gap / self.horizon) as i32) * c * s * self.lambda.powi(gap as i32 - 1)
    }

    /// `c_x^(floor((t - tau)/T)) c_w s lambda^(t - tau - 1)` for `tau < t`.
    pub fn beta_w(&self, s: f64, t: usize, tau: usize) -> f64 {
        self.gap_term(self.c_w, s, t, tau)
    }

    /// Same shape as [`RgesBounds::beta_w`] with `c_v`.
    pub fn beta_v(&self, s: f64, t: usize, tau: usize) -> f64 {
        self.gap_term(self.c_v, s, t, tau)
    }

    /// Composite bound at time `t` from `|x_0 - xbar_0|` and the disturbance
    /// and noise magnitudes for `tau < t`.
    pub fn bound(&self, e0: f64, w_norms: &[f64], v_norms: &[f64], t: usize) -> f64 {
        let mut b = self.beta_x(e0, t);
        for tau in 0..t {
            b = b
                .max(self.beta_w(w_norms[tau], t, tau))
                .max(self.beta_v(v_norms[tau], t, tau));
        }
        b
    }
}

/// Decay of the full-information bound in `T`, for the bound-factor analysis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum DecayFamily {
    /// `b^T`
    Exp { b: f64 },
    /// `(T + 1)^(-b)`
    Frac { b: f64 },
}

impl DecayFamily {
    fn validate(&self) -> Result<()> {
        match *self {
            DecayFamily::Exp { b } if b > 0.0 && b < 1.0 => Ok(()),
            DecayFamily::Frac { b } if b > 0.0 && b.is_finite() => Ok(()),
            other => Err(Error::Precondition(format!("invalid decay family {other:?}"))),
        }
    }

    /// `varphi(T)`
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            DecayFamily::Exp { b } => b.powf(t),
            DecayFamily::Frac { b } => (t + 1.0).powf(-b),
        }
    }

    /// `d varphi / dT`
    pub fn derivative(&self, t: f64) -> f64 {
        match *self {
            DecayFamily::Exp { b } => b.powf(t) * b.ln(),
            DecayFamily::Frac { b } => -b * (t + 1.0).powf(-b - 1.0),
        }
    }

    /// `phi(d) = varphi(T_low + d) / varphi(T_low)` as an L-function of the
    /// offset `d = T - T_low`.
    pub fn relative(&self, t_low: usize) -> LFunction {
        match *self {
            DecayFamily::Exp { b } => LFunction::Exp { scale: 1.0, lambda: b },
            DecayFamily::Frac { .. } => {
                // not of the (d + 1)^(-b) shape: tabulate on integer offsets
                let base = self.eval(t_low as f64);
                let tau: Vec<f64> = (0..=4096).map(|d| d as f64).collect();
                let values = tau.iter().map(|d| self.eval(t_low as f64 + d) / base).collect();
                LFunction::Steps { tau, values }
            }
        }
    }
}

/// `(eta phi(T - T_low))^floor(t / T)`.
pub fn error_bound_factor(eta: f64, phi: &LFunction, horizon: usize, t_low: usize, t: usize) -> Result<f64> {
    check_eta(eta)?;
    if horizon < t_low || horizon == 0 {
        return Err(Error::Precondition(format!(
            "horizon {horizon} must be positive and at least {t_low}"
        )));
    }
    let at_zero = phi.eval(0.0);
    if (at_zero - 1.0).abs() > 1e-12 {
        return Err(Error::Precondition(format!("phi(0) = {at_zero} must equal 1")));
    }
    let p = phi.eval((horizon - t_low) as f64);
    if !(p > 0.0 && p <= 1.0 + 1e-12) {
        return Err(Error::Precondition(format!("phi(T - T_low) = {p} must lie in (0, 1]")));
    }
    Ok((eta * p).powi((t / horizon) as i32))
}

/// `kappa(T) = varphi'(T) - varphi(T) / T * ln(eta varphi(T) / varphi(T_low))`,
/// whose sign decides whether the bound factor decreases in `T` for large `t`.
pub fn kappa(family: DecayFamily, eta: f64, t_low: usize, horizon: f64) -> Result<f64> {
    family.validate()?;
    check_eta(eta)?;
    let phi = family.eval(horizon);
    Ok(family.derivative(horizon) - phi / horizon * (eta * phi / family.eval(t_low as f64)).ln())
}

/// Sufficient condition for the bound factor to decrease in `T`.
///
/// Exponential decay: `T >= T_low >= 1 + ceil(log_b eta)`; the threshold is
/// `1 + ceil(log_b eta)`. Fractional decay: `T_low > eta^(1/b) (T + 1)
/// e^(-T/(T+1)) - 1`, with that right-hand side as threshold. Note that the
/// sign of [`kappa`] for fractional decay is governed by `eta^(-1/b)` in
/// place of `eta^(1/b)`; [`kappa`] can be evaluated directly for an exact
/// answer.
pub fn monotonicity_condition(family: DecayFamily, eta: f64, t_low: usize, horizon: usize) -> Result<Monotonicity> {
    family.validate()?;
    check_eta(eta)?;
    Ok(match family {
        DecayFamily::Exp { b } => {
            let threshold = 1.0 + ceil_snapped(eta.ln() / b.ln());
            Monotonicity {
                condition_holds: horizon >= t_low && t_low as f64 >= threshold,
                threshold,
            }
        }
        DecayFamily::Frac { b } => {
            let t = horizon as f64;
            let threshold = eta.powf(1.0 / b) * (t + 1.0) * (-t / (t + 1.0)).exp() - 1.0;
            Monotonicity {
                condition_holds: horizon >= t_low && t_low as f64 > threshold,
                threshold,
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rges_examples() {
        assert_eq!(rges_min_horizon(2.0, 0.5).unwrap(), 2);
        assert_eq!(rges_min_horizon(1.0, 0.9).unwrap(), 1);
        assert_eq!(rges_min_horizon(0.5, 0.9).unwrap(), 1);
        assert!(rges_min_horizon(2.0, 1.0).is_err());
    }

    #[test]
    fn ras_examples() {
        let b = BoundFunction::exp_power(2.0, 1.0, 0.5).unwrap();
        assert_eq!(ras_min_horizon(&b, 0.5, 0.0, 1.0).unwrap(), 2);
        assert_eq!(ras_min_horizon(&b, 0.5, 0.25, 1.0).unwrap(), 2);
        // the interval collapses to the single point s_bar
        assert_eq!(
            ras_min_horizon(&b, 0.5, 0.5, 1.0).unwrap(),
            tau_min(&b, 0.5, 1.0, 1.0).unwrap().max(1) as usize
        );
        assert!(matches!(ras_min_horizon(&b, 0.5, 0.6, 1.0), Err(Error::Precondition(_))));
    }

    #[test]
    fn closed_form_examples() {
        let e = closed_form_horizon(ClosedFormFamily::Exp { c: 2.0, a: 1.0, b: 0.5 }, 0.5, 1.0).unwrap();
        assert_eq!((e.horizon, e.raw), (2, 2.0));
        let f = closed_form_horizon(ClosedFormFamily::Frac { c: 2.0, a: 1.0, b: 1.0 }, 0.5, 1.0).unwrap();
        assert_eq!((f.horizon, f.raw), (3, 3.0));
        let z = closed_form_horizon(ClosedFormFamily::Exp { c: 0.4, a: 1.0, b: 0.5 }, 0.5, 1.0).unwrap();
        assert_eq!(z.horizon, 1);
        assert!(z.raw <= 0.0);
        assert!(closed_form_horizon(ClosedFormFamily::Exp { c: 2.0, a: 0.5, b: 0.5 }, 0.5, 1.0).is_err());
    }

    #[test]
    fn bound_map_examples() {
        let m = rges_bound_functions(2.0, 1.0, 1.0, 0.5, 2).unwrap();
        assert_eq!(m.beta_x(1.0, 4), 0.5);
        assert_eq!(m.beta_x(0.0, 4), 0.0);
        assert_eq!(m.beta_w(0.0, 4, 1), 0.0);
        assert_eq!(m.beta_v(0.0, 4, 3), 0.0);
        // gap 3 -> c_x^1 * c_w * lambda^2
        assert_eq!(m.beta_w(1.0, 4, 1), 0.5);
    }

    #[test]
    fn envelope_requires_finite_inputs() {
        let b = BoundFunction::exp_power(2.0, 1.0, 0.5).unwrap();
        assert_eq!(envelope(&b, &b, &b, 0.5, 0.1, 0.2).unwrap(), 1.0);
        assert!(envelope(&b, &b, &b, f64::INFINITY, 0.1, 0.2).is_err());
    }

    #[test]
    fn factor_examples() {
        let phi = DecayFamily::Exp { b: 0.5 }.relative(2);
        assert_eq!(error_bound_factor(0.5, &phi, 2, 2, 4).unwrap(), 0.25);
        assert_eq!(error_bound_factor(0.5, &phi, 5, 2, 4).unwrap(), 1.0);
        assert_eq!(error_bound_factor(0.5, &phi, 3, 2, 7).unwrap(), 0.25f64.powi(2));
        assert!(error_bound_factor(0.5, &phi, 1, 2, 4).is_err());
        let bad = LFunction::Exp { scale: 2.0, lambda: 0.5 };
        assert!(error_bound_factor(0.5, &bad, 2, 2, 4).is_err());
    }

    #[test]
    fn monotonicity_examples() {
        let m = monotonicity_condition(DecayFamily::Exp { b: 0.5 }, 0.5, 2, 3).unwrap();
        assert!(m.condition_holds);
        assert_eq!(m.threshold, 2.0);
        let m = monotonicity_condition(DecayFamily::Exp { b: 0.5 }, 0.25, 2, 3).unwrap();
        assert!(!m.condition_holds);
        assert_eq!(m.threshold, 3.0);
        let m = monotonicity_condition(DecayFamily::Frac { b: 1.0 }, 0.5, 3, 4).unwrap();
        assert!(m.condition_holds);
        assert!((m.threshold - (2.5 * (-0.8f64).exp() - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn kappa_matches_closed_forms() {
        let (eta, t_low) = (0.5, 3usize);
        for t in [3.0, 4.5, 9.0] {
            let b1: f64 = 0.6;
            let exp = kappa(DecayFamily::Exp { b: b1 }, eta, t_low, t).unwrap();
            let expected = b1.powf(t) / t * (b1.powi(t_low as i32) / eta).ln();
            assert!((exp - expected).abs() < 1e-14);
            let b2: f64 = 1.5;
            let frac = kappa(DecayFamily::Frac { b: b2 }, eta, t_low, t).unwrap();
            let expected = -b2 / (t + 1.0).powf(b2)
                * (1.0 / (t + 1.0) - (eta.powf(-1.0 / b2) * (t + 1.0) / (t_low as f64 + 1.0)).ln() / t);
            assert!((frac - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn report_round_trip() {
        let mut inputs = serde_json::Map::new();
        inputs.insert("c_x".into(), 2.0.into());
        let r = HorizonReport {
            t_min: 2,
            method: HorizonMethod::RgesFormula,
            raw: None,
            inputs,
            monotonicity: Some(Monotonicity {
                condition_holds: true,
                threshold: 2.0,
            }),
        };
        let s = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<HorizonReport>(&s).unwrap(), r);
    }

    proptest! {
        #[test]
        fn rges_horizon_contracts(c_x in 1.0f64..50.0, lambda in 0.05f64..0.99) {
            let h = rges_min_horizon(c_x, lambda).unwrap();
            let m = rges_bound_functions(c_x, c_x, c_x, lambda, h).unwrap();
            for s in [1e-3, 0.5, 1.0] {
                prop_assert!(c_x * s * lambda.powi(h as i32) < s);
            }
            prop_assert!(m.beta_x(1.0, 0) == c_x);
            for t in 0..=200usize {
                let f = c_x.powi((t / h) as i32) * lambda.powi(t as i32);
                prop_assert!(f <= 1.0 + 1e-9);
            }
        }

        #[test]
        fn closed_form_near_scan(c in 0.2f64..5.0, lambda in 0.1f64..0.95, eta in 0.1f64..0.9) {
            let f = ClosedFormFamily::Exp { c, a: 1.0, b: lambda };
            let cf = closed_form_horizon(f, eta, 1.0).unwrap();
            let scan = ras_min_horizon(&f.bound_function().unwrap(), eta, 0.0, 1.0).unwrap();
            prop_assert!((cf.horizon as i64 - scan as i64).abs() <= 1);
        }
    }
}
