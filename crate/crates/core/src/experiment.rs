//! Parameter overrides and batch runs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fleet::VehicleClass;
use crate::metrics::{accumulate_metrics, MetricsReport};
use crate::router::Policy;
use crate::scenario::{Scenario, ScenarioDoc, ScenarioError};
use crate::sim::{simulate, Record, SimError};

/// Changes applied to a scenario before running it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Overrides {
    pub horizon: Option<u32>,
    /// CAV share of the non-bus demand, in (0, 1].
    pub penetration: Option<f64>,
    /// Total CAV + HV demand in veh/h; used with `penetration`. Defaults to
    /// the scenario's own total.
    pub total_demand: Option<f64>,
    pub lambda: Option<f64>,
    pub window_dl: Option<u32>,
    pub window_gpl: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OverrideError {
    #[error("penetration must be in (0, 1], got {0}")]
    Penetration(f64),
    #[error("total demand must be positive, got {0}")]
    TotalDemand(f64),
    #[error("lambda must be > 0, got {0}")]
    Lambda(f64),
    #[error("{0} must be a positive integer")]
    Zero(&'static str),
}

impl Overrides {
    pub fn validate(&self) -> Result<(), OverrideError> {
        if let Some(p) = self.penetration {
            if !(p > 0.0 && p <= 1.0) {
                return Err(OverrideError::Penetration(p));
            }
        }
        if let Some(d) = self.total_demand {
            if !(d.is_finite() && d > 0.0) {
                return Err(OverrideError::TotalDemand(d));
            }
        }
        if let Some(l) = self.lambda {
            if !(l.is_finite() && l > 0.0) {
                return Err(OverrideError::Lambda(l));
            }
        }
        for (name, v) in [
            ("horizon", self.horizon),
            ("window-dl", self.window_dl),
            ("window-gpl", self.window_gpl),
        ] {
            if v == Some(0) {
                return Err(OverrideError::Zero(name));
            }
        }
        Ok(())
    }

    pub fn apply(&self, sc: &Scenario) -> Result<Scenario, OverrideError> {
        self.validate()?;
        let mut out = sc.clone();
        let p = &mut out.params;
        if let Some(h) = self.horizon {
            p.horizon = h;
        }
        if let Some(l) = self.lambda {
            p.lambda = l;
        }
        if let Some(w) = self.window_dl {
            p.delta_t_dl = w;
        }
        if let Some(w) = self.window_gpl {
            p.delta_t_gpl = w;
        }
        if let Some(pen) = self.penetration {
            let per_min = match self.total_demand {
                Some(h) => h / 60.0,
                None => out.demand.iter().map(|d| d.rate_per_min).sum(),
            };
            let cav_streams = out.demand.iter().filter(|d| d.class == VehicleClass::Cav).count();
            let hv_streams = out.demand.len() - cav_streams;
            for d in &mut out.demand {
                d.rate_per_min = match d.class {
                    VehicleClass::Cav => pen * per_min / cav_streams as f64,
                    _ => (1.0 - pen) * per_min / hv_streams as f64,
                };
            }
        }
        Ok(out)
    }

    /// Same changes on the document level, so the effective scenario can be
    /// written out and reloaded. A missing `params` section stays missing.
    pub fn apply_doc(&self, doc: &ScenarioDoc) -> Result<ScenarioDoc, OverrideError> {
        self.validate()?;
        let mut out = doc.clone();
        if let Some(p) = out.params.as_mut() {
            if let Some(h) = self.horizon {
                p.horizon = h;
            }
            if let Some(l) = self.lambda {
                p.lambda = l;
            }
            if let Some(w) = self.window_dl {
                p.delta_t_dl = w;
            }
            if let Some(w) = self.window_gpl {
                p.delta_t_gpl = w;
            }
        }
        if let Some(pen) = self.penetration {
            let per_min = match self.total_demand {
                Some(h) => h / 60.0,
                None => out.demand.iter().map(|d| d.rate_per_min).sum(),
            };
            let is_cav = |d: &crate::scenario::DemandDoc| d.class.vehicle_class() == VehicleClass::Cav;
            let cav_streams = out.demand.iter().filter(|d| is_cav(d)).count();
            let hv_streams = out.demand.len() - cav_streams;
            for d in &mut out.demand {
                d.rate_per_min = if is_cav(d) {
                    pen * per_min / cav_streams as f64
                } else {
                    (1.0 - pen) * per_min / hv_streams as f64
                };
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Error)]
pub enum SetupError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Override(#[from] OverrideError),
}

/// Loads `source`, applies `overrides` and validates the result. Returns the
/// effective document alongside the scenario built from it.
pub fn prepare(source: &str, overrides: &Overrides) -> Result<(ScenarioDoc, Scenario), SetupError> {
    let doc = overrides.apply_doc(&ScenarioDoc::load(source)?)?;
    let sc = Scenario::from_doc(&doc)?;
    Ok((doc, sc))
}

pub struct RunResult {
    pub policy: Policy,
    pub seed: u64,
    pub trace: Vec<Record>,
    pub metrics: MetricsReport,
}

/// Simulates one (policy, seed) cell and computes its metrics.
pub fn run_one(sc: &Scenario, policy: Policy, seed: u64) -> Result<RunResult, SimError> {
    let out = simulate(sc, policy, seed)?;
    let net = &sc.network;
    let metrics = accumulate_metrics(&out.trace, sc.params.on_time_tolerance, |n| {
        net.label(crate::network::NodeId(n))
    });
    Ok(RunResult {
        policy,
        seed,
        trace: out.trace,
        metrics,
    })
}
