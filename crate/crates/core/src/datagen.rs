//! Synthetic observational data with known propensity and prognostic scores.
//!
//! Covariates are i.i.d. standard normal. Treatment is Bernoulli with a logit
//! linear in `x1`; the prognostic score mixes `x1` and `x2` so that `rho` is
//! exactly the correlation between the two scores in the base design.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, TruthRecord};
use crate::error::{Error, Result};
use crate::rng::SimRng;

/// Weight of the unmeasured confounder in both scores.
pub const CONFOUNDER_WEIGHT: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Base,
    UnmeasuredConfounder,
    ManyCovariates,
    SmallSample,
    PoorOverlap,
    NoisyOutcome,
    HeterogeneousEffect,
}

impl Scenario {
    pub const ALL: [Scenario; 7] = [
        Scenario::Base,
        Scenario::UnmeasuredConfounder,
        Scenario::ManyCovariates,
        Scenario::SmallSample,
        Scenario::PoorOverlap,
        Scenario::NoisyOutcome,
        Scenario::HeterogeneousEffect,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Base => "base",
            Scenario::UnmeasuredConfounder => "unmeasured_confounder",
            Scenario::ManyCovariates => "many_covariates",
            Scenario::SmallSample => "small_sample",
            Scenario::PoorOverlap => "poor_overlap",
            Scenario::NoisyOutcome => "noisy_outcome",
            Scenario::HeterogeneousEffect => "heterogeneous_effect",
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown scenario {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScenarioConfig")]
pub struct ScenarioSpec {
    pub name: Scenario,
    pub n: usize,
    pub p: usize,
    pub rho: f64,
    pub sigma: f64,
    pub tau: f64,
    pub c: f64,
}

/// Partial scenario description; unset fields take the scenario defaults.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: Scenario,
    pub n: Option<usize>,
    pub p: Option<usize>,
    pub rho: Option<f64>,
    pub sigma: Option<f64>,
    pub tau: Option<f64>,
    pub c: Option<f64>,
}

impl TryFrom<ScenarioConfig> for ScenarioSpec {
    type Error = Error;

    fn try_from(cfg: ScenarioConfig) -> Result<Self> {
        let d = ScenarioSpec::defaults(cfg.name);
        let spec = ScenarioSpec {
            name: cfg.name,
            n: cfg.n.unwrap_or(d.n),
            p: cfg.p.unwrap_or(d.p),
            rho: cfg.rho.unwrap_or(d.rho),
            sigma: cfg.sigma.unwrap_or(d.sigma),
            tau: cfg.tau.unwrap_or(d.tau),
            c: cfg.c.unwrap_or(d.c),
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl ScenarioSpec {
    pub fn defaults(name: Scenario) -> Self {
        let base = ScenarioSpec { name, n: 2000, p: 10, rho: 0.5, sigma: 1.0, tau: 1.0, c: 3.0 };
        match name {
            Scenario::ManyCovariates => ScenarioSpec { p: 50, ..base },
            Scenario::SmallSample => ScenarioSpec { n: 1600, c: 2.75, ..base },
            Scenario::NoisyOutcome => ScenarioSpec { sigma: 2.0, ..base },
            _ => base,
        }
    }

    pub fn base() -> Self {
        Self::defaults(Scenario::Base)
    }

    pub fn with_rho(self, rho: f64) -> Self {
        ScenarioSpec { rho, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::invalid(format!("n must be at least 2, got {}", self.n)));
        }
        if self.p < 2 {
            return Err(Error::invalid(format!("p must be at least 2, got {}", self.p)));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::invalid(format!("rho must lie in [0, 1], got {}", self.rho)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid(format!("sigma must be finite and >= 0, got {}", self.sigma)));
        }
        if !self.tau.is_finite() || !self.c.is_finite() {
            return Err(Error::invalid("tau and c must be finite"));
        }
        Ok(())
    }

    fn phi(&self, x1: f64) -> f64 {
        match self.name {
            Scenario::PoorOverlap => x1 - 10.0 / 3.0,
            _ => x1 / 3.0 - self.c,
        }
    }

    fn psi(&self, x1: f64, x2: f64) -> f64 {
        self.rho * x1 + (1.0 - self.rho * self.rho).sqrt() * x2
    }

    fn unit_effect(&self, x1: f64) -> f64 {
        match self.name {
            Scenario::HeterogeneousEffect => 1.0 + x1 / 4.0,
            _ => self.tau,
        }
    }

    fn confounder_weight(&self) -> f64 {
        match self.name {
            Scenario::UnmeasuredConfounder => CONFOUNDER_WEIGHT,
            _ => 0.0,
        }
    }
}

fn logistic(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Draws one dataset. Identical `(spec, seed)` pairs give bit-identical data.
///
/// Draw order is fixed: covariates row by row, then the confounder `u`, then
/// one treatment uniform per unit, then the outcome noise. `u` is drawn in every
/// scenario, so scenarios sharing `n` and `p` see the same covariates.
pub fn generate(spec: &ScenarioSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let (n, p) = (spec.n, spec.p);
    let mut rng = SimRng::new(seed);

    let mut xs = Vec::with_capacity(n * p);
    for _ in 0..n * p {
        xs.push(rng.standard_normal());
    }
    let x = DMatrix::from_row_slice(n, p, &xs);
    let u: Vec<f64> = (0..n).map(|_| rng.standard_normal()).collect();
    let assign: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
    let noise: Vec<f64> = (0..n).map(|_| rng.standard_normal()).collect();

    let w = spec.confounder_weight();
    let mut t = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut truth = TruthRecord {
        phi: Vec::with_capacity(n),
        psi: Vec::with_capacity(n),
        tau_i: Vec::with_capacity(n),
        epsilon: Vec::with_capacity(n),
        u: Some(u.clone()),
    };
    for i in 0..n {
        let (x1, x2) = (x[(i, 0)], x[(i, 1)]);
        let phi = spec.phi(x1) + w * u[i];
        let psi = spec.psi(x1, x2) + w * u[i];
        let tau_i = spec.unit_effect(x1);
        let eps = spec.sigma * noise[i];
        let ti = u8::from(assign[i] < logistic(phi));
        t.push(ti);
        y.push(tau_i * ti as f64 + psi + eps);
        truth.phi.push(phi);
        truth.psi.push(psi);
        truth.tau_i.push(tau_i);
        truth.epsilon.push(eps);
    }
    Dataset::new(x, t, y, Some(truth))
}

/// Evaluates the scenario's score formulas on covariates, without the
/// unmeasured-confounder term.
pub fn true_scores(x: &DMatrix<f64>, spec: &ScenarioSpec) -> Result<(Vec<f64>, Vec<f64>)> {
    if x.ncols() < 2 {
        return Err(Error::Dimension(format!("need at least 2 covariates, got {}", x.ncols())));
    }
    let phi = (0..x.nrows()).map(|i| spec.phi(x[(i, 0)])).collect();
    let psi = (0..x.nrows()).map(|i| spec.psi(x[(i, 0)], x[(i, 1)])).collect();
    Ok((phi, psi))
}

/// Sample average treatment effect on the treated, from the truth record.
pub fn satt_target(ds: &Dataset) -> Result<f64> {
    let truth = ds.truth.as_ref().ok_or(Error::MissingTruth)?;
    let treated = ds.treated_indices();
    if treated.is_empty() {
        return Err(Error::EmptyArm("no treated units".into()));
    }
    Ok(treated.iter().map(|&i| truth.tau_i[i]).sum::<f64>() / treated.len() as f64)
}

/// Standardized mean outcome difference between arms (pooled SD).
pub fn cohens_d(ds: &Dataset) -> f64 {
    let arm = |flag: u8| -> (f64, f64, f64) {
        let ys: Vec<f64> = (0..ds.n()).filter(|&i| ds.t[i] == flag).map(|i| ds.y[i]).collect();
        let m = ys.len() as f64;
        let mean = ys.iter().sum::<f64>() / m;
        let ss = ys.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
        (m, mean, ss)
    };
    let (n1, m1, ss1) = arm(1);
    let (n0, m0, ss0) = arm(0);
    (m1 - m0) / ((ss1 + ss0) / (n1 + n0 - 2.0)).sqrt()
}
