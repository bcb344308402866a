//! JSON configuration schemas. Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::estimator::{Horizon, SolverSettings};
use crate::horizon::{
    closed_form_horizon, monotonicity_condition, ras_min_horizon, rges_min_horizon, ClosedFormFamily,
    DecayFamily, HorizonMethod, HorizonReport,
};
use crate::kl::BoundFunction;
use crate::system::IossCertificate;
use crate::{Error, Result};

pub use crate::harness::ExperimentConfig;

/// Read and parse a JSON config.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// `simulate`: one seeded trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub system: String,
    pub x0: Vec<f64>,
    pub t_max: usize,
    pub delta_w: f64,
    pub delta_v: f64,
    /// Disturbances at box vertices instead of uniform.
    #[serde(default)]
    pub corner: bool,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

/// `estimate`: simulate a trajectory and run FIE or MHE on it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    pub system: String,
    pub x0: Vec<f64>,
    /// Prior for the initial state.
    pub xbar0: Vec<f64>,
    pub t_max: usize,
    pub delta_w: f64,
    pub delta_v: f64,
    #[serde(default)]
    pub corner: bool,
    pub horizon: Horizon,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<IossCertificate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage_cost: Option<BoundFunction>,
    #[serde(default = "default_cost_range")]
    pub cost_range: f64,
    #[serde(default)]
    pub solver: SolverSettings,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

fn default_cost_range() -> f64 {
    10.0
}

/// Which horizon to compute.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum HorizonQuery {
    RgesFormula {
        c_x: f64,
        lambda: f64,
    },
    TauMin {
        beta_x: BoundFunction,
        eta: f64,
        #[serde(default)]
        epsilon: f64,
        s_bar: f64,
    },
    ClosedForm {
        bound: ClosedFormFamily,
        eta: f64,
        s_bar: f64,
    },
}

/// Inputs of the bound-factor monotonicity analysis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonotonicityQuery {
    pub decay: DecayFamily,
    pub eta: f64,
    #[serde(rename = "T_low")]
    pub t_low: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
}

/// `horizon`: a horizon query and an optional monotonicity query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonConfig {
    pub query: HorizonQuery,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monotonicity: Option<MonotonicityQuery>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl HorizonConfig {
    pub fn evaluate(&self) -> Result<HorizonReport> {
        let query = serde_json::to_value(&self.query)?;
        let mut inputs = match query {
            serde_json::Value::Object(m) => m,
            _ => unreachable!("queries serialize to objects"),
        };
        inputs.remove("method");
        let (t_min, method, raw) = match &self.query {
            HorizonQuery::RgesFormula { c_x, lambda } => (rges_min_horizon(*c_x, *lambda)?, HorizonMethod::RgesFormula, None),
            HorizonQuery::TauMin {
                beta_x,
                eta,
                epsilon,
                s_bar,
            } => (ras_min_horizon(beta_x, *eta, *epsilon, *s_bar)?, HorizonMethod::TauMin, None),
            HorizonQuery::ClosedForm { bound, eta, s_bar } => {
                let cf = closed_form_horizon(*bound, *eta, *s_bar)?;
                let method = match bound {
                    ClosedFormFamily::Exp { .. } => HorizonMethod::ClosedFormExp,
                    ClosedFormFamily::Frac { .. } => HorizonMethod::ClosedFormFrac,
                };
                (cf.horizon, method, Some(cf.raw))
            }
        };
        let monotonicity = match &self.monotonicity {
            Some(m) => {
                inputs.insert("monotonicity".into(), serde_json::to_value(m)?);
                Some(monotonicity_condition(m.decay, m.eta, m.t_low, m.horizon)?)
            }
            None => None,
        };
        Ok(HorizonReport {
            t_min,
            method,
            raw,
            inputs,
            monotonicity,
        })
    }
}

/// Any config with an optional output path.
pub trait HasOutput {
    fn output(&self) -> Option<&Path>;
}

macro_rules! has_output {
    ($($t:ty),*) => {$(
        impl HasOutput for $t {
            fn output(&self) -> Option<&Path> {
                self.output.as_deref()
            }
        }
    )*};
}

has_output!(SimulateConfig, EstimateConfig, HorizonConfig, ExperimentConfig);
