use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported scenario schema {0}")]
    Schema(u32),
    #[error("signal for `{0}` has no knots")]
    EmptySignal(String),
    #[error("signal for `{0}` has decreasing or non-finite knot times")]
    UnsortedSignal(String),
    #[error("time step must be positive, got {0}")]
    BadTimeStep(f64),
    #[error("horizon must be nonnegative, got {0}")]
    BadHorizon(f64),
    #[error("node `{0}` has more than one signal")]
    DuplicateSignal(String),
}

/// Piecewise-linear time signal, held constant outside its knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    knots: Vec<(f64, f64)>,
}

impl Signal {
    pub fn new(name: &str, knots: Vec<(f64, f64)>) -> Result<Self, ScenarioError> {
        if knots.is_empty() {
            return Err(ScenarioError::EmptySignal(name.to_string()));
        }
        let sorted = knots.windows(2).all(|w| w[0].0 <= w[1].0);
        if !sorted || knots.iter().any(|k| !k.0.is_finite() || !k.1.is_finite()) {
            return Err(ScenarioError::UnsortedSignal(name.to_string()));
        }
        Ok(Self { knots })
    }

    pub fn constant(value: f64) -> Self {
        Self {
            knots: vec![(0.0, value)],
        }
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    pub fn value(&self, t: f64) -> f64 {
        let k = &self.knots;
        if t <= k[0].0 {
            return k[0].1;
        }
        let last = k[k.len() - 1];
        if t >= last.0 {
            return last.1;
        }
        // First knot strictly after t; t lies in [k[j-1].0, k[j].0).
        let j = k.partition_point(|&(tk, _)| tk <= t);
        let ((t0, v0), (t1, v1)) = (k[j - 1], k[j]);
        if t1 == t0 {
            v1
        } else {
            v0 + (v1 - v0) * (t - t0) / (t1 - t0)
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum PressureUnit {
    #[default]
    #[serde(rename = "Pa", alias = "pa")]
    Pa,
    #[serde(rename = "bar")]
    Bar,
}

impl PressureUnit {
    pub fn to_pascal(self) -> f64 {
        match self {
            PressureUnit::Pa => 1.0,
            PressureUnit::Bar => 1e5,
        }
    }
}

/// Optional solver settings carried by a scenario file. Strings are parsed by
/// the solver layer so that the file format stays flat.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub eps0: Option<f64>,
    pub eps_tol: Option<f64>,
    pub n_max: Option<usize>,
    pub precond: Option<String>,
    pub method: Option<String>,
    pub krylov: Option<String>,
    pub krylov_max_iter: Option<usize>,
    pub mesh_h: Option<f64>,
    pub c: Option<f64>,
    pub initial: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSupply {
    node: String,
    pressure: Vec<(f64, f64)>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDemand {
    node: String,
    flow: Vec<(f64, f64)>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    #[serde(default)]
    schema: Option<u32>,
    #[serde(default)]
    pressure_unit: PressureUnit,
    supplies: Vec<RawSupply>,
    demands: Vec<RawDemand>,
    horizon_s: f64,
    tau_s: f64,
    #[serde(default)]
    solver: SolverSection,
}

/// Boundary signals in SI units (Pa, kg/s) keyed by original node id.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub supplies: BTreeMap<String, Signal>,
    pub demands: BTreeMap<String, Signal>,
    pub horizon: f64,
    pub tau: f64,
    pub solver: SolverSection,
}

impl Scenario {
    pub fn from_json_str(text: &str) -> Result<Self, ScenarioError> {
        let raw: RawScenario = serde_json::from_str(text)?;
        if let Some(s) = raw.schema {
            if s != 1 {
                return Err(ScenarioError::Schema(s));
            }
        }
        let scale = raw.pressure_unit.to_pascal();
        let mut supplies = BTreeMap::new();
        for s in raw.supplies {
            let knots = s.pressure.into_iter().map(|(t, v)| (t, v * scale)).collect();
            let sig = Signal::new(&s.node, knots)?;
            if supplies.insert(s.node.clone(), sig).is_some() {
                return Err(ScenarioError::DuplicateSignal(s.node));
            }
        }
        let mut demands = BTreeMap::new();
        for d in raw.demands {
            let sig = Signal::new(&d.node, d.flow)?;
            if demands.insert(d.node.clone(), sig).is_some() {
                return Err(ScenarioError::DuplicateSignal(d.node));
            }
        }
        let sc = Self {
            supplies,
            demands,
            horizon: raw.horizon_s,
            tau: raw.tau_s,
            solver: raw.solver,
        };
        sc.validate()?;
        Ok(sc)
    }

    /// Constant signals; pressures in Pa, flows in kg/s.
    pub fn constant(supplies: &[(&str, f64)], demands: &[(&str, f64)], horizon: f64, tau: f64) -> Self {
        Self {
            supplies: supplies.iter().map(|&(n, v)| (n.to_string(), Signal::constant(v))).collect(),
            demands: demands.iter().map(|&(n, v)| (n.to_string(), Signal::constant(v))).collect(),
            horizon,
            tau,
            solver: SolverSection::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(ScenarioError::BadTimeStep(self.tau));
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(ScenarioError::BadHorizon(self.horizon));
        }
        Ok(())
    }

    /// Number of implicit Euler steps, `round(horizon / τ)`.
    pub fn steps(&self) -> usize {
        (self.horizon / self.tau).round() as usize
    }

    pub fn mean_supply_pressure(&self, t: f64) -> f64 {
        let n = self.supplies.len().max(1) as f64;
        self.supplies.values().map(|s| s.value(t)).sum::<f64>() / n
    }
}
