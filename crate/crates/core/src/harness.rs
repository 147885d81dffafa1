//! Monte Carlo driver: sweeps (method, ρ, k) cells over replicated datasets
//! and aggregates bias, SD, MSE and median Γ*.

use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dataset::{fmt_f64, Dataset};
use crate::datagen::{generate, satt_target, Scenario, ScenarioSpec};
use crate::distance::{build_distances, sample_covariance, Features};
use crate::error::{Error, Result};
use crate::estimate::{satt_1k, satt_full, tau_theta, Estimator};
use crate::matched::Matching;
use crate::models::predict_linear;
use crate::pilot::{
    fit_prognostic, fit_propensity, match_with_ratio, prepare_pilot, select_pilot, MatchRatio, ModelSpec,
    PilotOptions,
};
use crate::rng::{derive_seed, RNG_ALGORITHM};
use crate::sensitivity::{max_gamma, DEFAULT_ALPHA, DEFAULT_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Mahalanobis,
    Propensity,
    Pilot,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Mahalanobis, Method::Propensity, Method::Pilot];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Mahalanobis => "mahalanobis",
            Method::Propensity => "propensity",
            Method::Pilot => "pilot",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown method {s:?} (expected mahalanobis, propensity or pilot)")))
    }
}

/// Number of controls per treated unit, or full matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum KValue {
    Fixed(usize),
    Full,
}

impl fmt::Display for KValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KValue::Fixed(k) => write!(f, "{k}"),
            KValue::Full => f.write_str("full"),
        }
    }
}

impl std::str::FromStr for KValue {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "full" {
            return Ok(KValue::Full);
        }
        match s.parse::<usize>() {
            Ok(k) if k >= 1 => Ok(KValue::Fixed(k)),
            _ => Err(Error::invalid(format!("k must be a positive integer or \"full\", got {s:?}"))),
        }
    }
}

impl Serialize for KValue {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            KValue::Fixed(k) => s.serialize_u64(*k as u64),
            KValue::Full => s.serialize_str("full"),
        }
    }
}

impl<'de> Deserialize<'de> for KValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(0) => Err(serde::de::Error::custom("k must be at least 1")),
            Raw::Int(k) => Ok(KValue::Fixed(k as usize)),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Control:treated bounds for full matching; `max_ratio = None` is unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FullBounds {
    pub min_ratio: f64,
    pub max_ratio: Option<f64>,
}

impl Default for FullBounds {
    fn default() -> Self {
        FullBounds { min_ratio: 1.0, max_ratio: None }
    }
}

impl FullBounds {
    fn ratio(self) -> MatchRatio {
        MatchRatio::Full { min_ratio: self.min_ratio, max_ratio: self.max_ratio.unwrap_or(f64::INFINITY) }
    }
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}
fn default_k() -> Vec<KValue> {
    vec![KValue::Fixed(1)]
}
fn default_replicates() -> usize {
    200
}
fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}
fn default_tol() -> f64 {
    DEFAULT_TOL
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub scenario: ScenarioSpec,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_k")]
    pub k_values: Vec<KValue>,
    /// Correlations to sweep; empty means the scenario's own ρ.
    #[serde(default)]
    pub rho_values: Vec<f64>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub model_opts: PilotOptions,
    /// Match the propensity method on the true φ instead of a fitted model.
    #[serde(default)]
    pub true_propensity: bool,
    #[serde(default)]
    pub full_bounds: FullBounds,
    #[serde(default = "default_tol")]
    pub gamma_tol: f64,
    /// Compute Γ* for fixed-ratio matchings.
    #[serde(default = "default_true")]
    pub sensitivity: bool,
}

impl SimConfig {
    pub fn new(scenario: ScenarioSpec) -> Self {
        SimConfig {
            scenario,
            methods: default_methods(),
            k_values: default_k(),
            rho_values: Vec::new(),
            replicates: default_replicates(),
            base_seed: 0,
            alpha: DEFAULT_ALPHA,
            model_opts: PilotOptions::default(),
            true_propensity: false,
            full_bounds: FullBounds::default(),
            gamma_tol: DEFAULT_TOL,
            sensitivity: true,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SimConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn rhos(&self) -> Vec<f64> {
        if self.rho_values.is_empty() {
            vec![self.scenario.rho]
        } else {
            self.rho_values.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.replicates == 0 {
            return Err(Error::invalid("replicates must be at least 1"));
        }
        if self.methods.is_empty() || self.k_values.is_empty() {
            return Err(Error::invalid("methods and k_values must be nonempty"));
        }
        for (i, m) in self.methods.iter().enumerate() {
            if self.methods[..i].contains(m) {
                return Err(Error::invalid(format!("method {m} listed twice")));
            }
        }
        for (i, k) in self.k_values.iter().enumerate() {
            if matches!(k, KValue::Fixed(0)) {
                return Err(Error::invalid("k must be at least 1"));
            }
            if self.k_values[..i].contains(k) {
                return Err(Error::invalid(format!("k value {k} listed twice")));
            }
        }
        if let Some(r) = self.rho_values.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::invalid(format!("rho must lie in [0, 1], got {r}")));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.gamma_tol > 0.0 && self.gamma_tol.is_finite()) {
            return Err(Error::invalid("gamma_tol must be positive"));
        }
        let fb = self.full_bounds;
        let max = fb.max_ratio.unwrap_or(f64::INFINITY);
        if !(fb.min_ratio > 0.0 && fb.min_ratio <= max) {
            return Err(Error::invalid("full_bounds need 0 < min_ratio ≤ max_ratio"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateResult {
    pub scenario: Scenario,
    pub method: Method,
    pub rho: f64,
    pub k: KValue,
    pub replicate: usize,
    /// Replicate seed; data and pilot seeds derive from it.
    pub seed: u64,
    pub n_t: usize,
    pub n_sets: usize,
    pub estimator: Option<Estimator>,
    pub tau_hat: Option<f64>,
    pub satt_target: f64,
    pub gamma_star: Option<f64>,
    /// `not_significant`, `ceiling` or `degenerate` when Γ* needs qualifying.
    pub gamma_flag: Option<String>,
    /// The matching passed its structural checks (and, for full matching,
    /// covers every eligible unit within the ratio bounds).
    pub invariants_ok: bool,
    pub diagnostics: Vec<String>,
    pub error: Option<String>,
}

impl ReplicateResult {
    pub fn succeeded(&self) -> bool {
        self.error.is_none() && self.tau_hat.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AggregateMetrics {
    pub bias: f64,
    pub sd: f64,
    pub mse: f64,
    pub median_gamma: Option<f64>,
    pub replicates: usize,
}

/// Bias (mean error), SD (divisor r−1; 0 for one replicate), MSE (divisor r)
/// and the lower median of Γ* over successful replicates.
pub fn aggregate(results: &[ReplicateResult]) -> Result<AggregateMetrics> {
    let ok: Vec<&ReplicateResult> = results.iter().filter(|r| r.succeeded()).collect();
    if ok.is_empty() {
        return Err(Error::invalid("no successful replicates to aggregate"));
    }
    let r = ok.len() as f64;
    let taus: Vec<f64> = ok.iter().map(|x| x.tau_hat.unwrap_or(f64::NAN)).collect();
    let errs: Vec<f64> = ok.iter().zip(&taus).map(|(x, t)| t - x.satt_target).collect();
    let bias = errs.iter().sum::<f64>() / r;
    let mean_tau = taus.iter().sum::<f64>() / r;
    let sd = if ok.len() > 1 { (taus.iter().map(|t| (t - mean_tau).powi(2)).sum::<f64>() / (r - 1.0)).sqrt() } else { 0.0 };
    let mse = errs.iter().map(|e| e * e).sum::<f64>() / r;
    let mut gammas: Vec<f64> = ok.iter().filter_map(|x| x.gamma_star).collect();
    gammas.sort_by(f64::total_cmp);
    let median_gamma = if gammas.is_empty() { None } else { Some(gammas[(gammas.len() - 1) / 2]) };
    Ok(AggregateMetrics { bias, sd, mse, median_gamma, replicates: ok.len() })
}

/// One (method, ρ, k) cell of a batch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub scenario: Scenario,
    pub method: Method,
    pub rho: f64,
    pub k: KValue,
    pub succeeded: usize,
    pub failed: usize,
    pub metrics: Option<AggregateMetrics>,
    pub single_replicate: bool,
}

#[derive(Debug, Clone)]
pub struct BatchOutput {
    pub results: Vec<ReplicateResult>,
    pub cells: Vec<CellSummary>,
}

impl BatchOutput {
    pub fn cell(&self, method: Method, rho: f64, k: KValue) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.method == method && c.rho == rho && c.k == k)
    }
}

struct Seeds {
    replicate: u64,
    data: u64,
    pilot: u64,
}

fn derive_seeds(base: u64, replicate: usize) -> Seeds {
    let rep = derive_seed(base, replicate as u64);
    Seeds { replicate: rep, data: derive_seed(rep, 0), pilot: derive_seed(rep, 1) }
}

fn ratio_for(cfg: &SimConfig, k: KValue) -> MatchRatio {
    match k {
        KValue::Fixed(k) => MatchRatio::Fixed(k),
        KValue::Full => cfg.full_bounds.ratio(),
    }
}

fn full_invariants(m: &Matching, eligible: &[usize], ratio: MatchRatio) -> bool {
    let MatchRatio::Full { min_ratio, max_ratio } = ratio else { return true };
    let mut units = m.units();
    units.sort_unstable();
    let mut want = eligible.to_vec();
    want.sort_unstable();
    units == want
        && m.sets.iter().all(|s| {
            let r = s.controls.len() as f64 / s.treated.len() as f64;
            !s.treated.is_empty() && !s.controls.is_empty() && r >= min_ratio - 1e-12 && r <= max_ratio + 1e-12
        })
}

/// Evaluates the requested methods and k values on one dataset, sharing
/// model fits and distances across k.
fn evaluate(cfg: &SimConfig, rho: f64, replicate: usize, methods: &[Method], ks: &[KValue]) -> Vec<ReplicateResult> {
    let s = derive_seeds(cfg.base_seed, replicate);
    let spec = cfg.scenario.with_rho(rho);
    let blank = |method: Method, k: KValue| ReplicateResult {
        scenario: spec.name,
        method,
        rho,
        k,
        replicate,
        seed: s.replicate,
        n_t: 0,
        n_sets: 0,
        estimator: None,
        tau_hat: None,
        satt_target: f64::NAN,
        gamma_star: None,
        gamma_flag: None,
        invariants_ok: false,
        diagnostics: Vec::new(),
        error: None,
    };
    let fail_all = |msg: String| -> Vec<ReplicateResult> {
        methods
            .iter()
            .flat_map(|&m| ks.iter().map(move |&k| (m, k)))
            .map(|(m, k)| ReplicateResult { error: Some(msg.clone()), ..blank(m, k) })
            .collect()
    };
    let ds = match generate(&spec, s.data) {
        Ok(ds) => ds,
        Err(e) => return fail_all(e.to_string()),
    };
    let target = match satt_target(&ds) {
        Ok(t) => t,
        Err(e) => return fail_all(e.to_string()),
    };
    let all_units: Vec<usize> = (0..ds.n()).collect();

    let mut out = Vec::with_capacity(methods.len() * ks.len());
    for &method in methods {
        // Distances (or the pilot fit) shared across k.
        let prepared: Result<(crate::distance::DistanceMatrix, Vec<usize>, Vec<String>)> = (|| match method {
            Method::Mahalanobis => {
                let dm = build_distances(&ds, Features::Raw(cfg.model_opts.model.columns()), None)?;
                let diag = if dm.ridged { vec!["covariance_ridged".to_string()] } else { Vec::new() };
                Ok((dm, all_units.clone(), diag))
            }
            Method::Propensity => {
                let mut diag = Vec::new();
                let phi = if cfg.true_propensity {
                    ds.truth.as_ref().ok_or(Error::MissingTruth)?.phi.clone()
                } else {
                    let model = fit_propensity(&ds, &cfg.model_opts)?;
                    if !model.converged {
                        diag.push("propensity_not_converged".to_string());
                    }
                    predict_linear(&model, &ds.x)?
                };
                Ok((build_distances(&ds, Features::Propensity(&phi), None)?, all_units.clone(), diag))
            }
            Method::Pilot => {
                let fit = prepare_pilot(&ds, s.pilot, &cfg.model_opts)?;
                let mut diag = Vec::new();
                if !fit.propensity.converged {
                    diag.push("propensity_not_converged".to_string());
                }
                if fit.prognostic.kind.is_lasso() && cfg.model_opts.model != ModelSpec::Lasso {
                    diag.push("prognostic_lasso_fallback".to_string());
                }
                if fit.distances.ridged {
                    diag.push("covariance_ridged".to_string());
                }
                Ok((fit.distances, fit.split.analysis, diag))
            }
        })();
        let (dm, eligible, diag) = match prepared {
            Ok(p) => p,
            Err(e) => {
                for &k in ks {
                    out.push(ReplicateResult { error: Some(e.to_string()), satt_target: target, n_t: ds.n_treated(), ..blank(method, k) });
                }
                continue;
            }
        };
        for &k in ks {
            let mut res = ReplicateResult {
                satt_target: target,
                n_t: ds.n_treated(),
                diagnostics: diag.clone(),
                ..blank(method, k)
            };
            let ratio = ratio_for(cfg, k);
            let matching = match match_with_ratio(&dm, ratio) {
                Ok(m) => m,
                Err(e) => {
                    res.error = Some(e.to_string());
                    out.push(res);
                    continue;
                }
            };
            res.invariants_ok = matching.check(&ds.t).is_ok() && full_invariants(&matching, &eligible, ratio);
            res.n_sets = matching.sets.len();
            let est = match k {
                KValue::Fixed(_) => satt_1k(&matching, &ds.y),
                KValue::Full => satt_full(&matching, &ds.y),
            };
            match est {
                Ok(e) => {
                    res.tau_hat = Some(e.tau_hat);
                    res.estimator = Some(e.estimator);
                }
                Err(e) => {
                    res.error = Some(e.to_string());
                    out.push(res);
                    continue;
                }
            }
            if cfg.sensitivity && matches!(k, KValue::Fixed(_)) {
                match max_gamma(&matching, &ds.y, cfg.alpha, cfg.gamma_tol) {
                    Ok(g) => {
                        res.gamma_star = Some(g.gamma_star);
                        if g.not_significant {
                            res.gamma_flag = Some("not_significant".into());
                        } else if g.at_ceiling {
                            res.gamma_flag = Some("ceiling".into());
                        }
                    }
                    Err(_) => res.gamma_flag = Some("degenerate".into()),
                }
            }
            out.push(res);
        }
    }
    out
}

/// One replicate of one cell.
pub fn run_replicate(cfg: &SimConfig, method: Method, rho: f64, k: KValue, replicate: usize) -> Result<ReplicateResult> {
    cfg.validate()?;
    Ok(evaluate(cfg, rho, replicate, &[method], &[k]).remove(0))
}

fn run_all(cfg: &SimConfig) -> Vec<ReplicateResult> {
    let rhos = cfg.rhos();
    let tasks: Vec<(usize, usize)> =
        (0..rhos.len()).flat_map(|ri| (0..cfg.replicates).map(move |rep| (ri, rep))).collect();
    let mut results: Vec<ReplicateResult> = tasks
        .par_iter()
        .flat_map_iter(|&(ri, rep)| evaluate(cfg, rhos[ri], rep, &cfg.methods, &cfg.k_values))
        .collect();
    let pos = |v: &ReplicateResult| {
        (
            cfg.methods.iter().position(|m| *m == v.method),
            rhos.iter().position(|r| *r == v.rho),
            cfg.k_values.iter().position(|k| *k == v.k),
            v.replicate,
        )
    };
    results.sort_by_key(pos);
    results
}

/// Runs every (method, ρ, k) cell. `jobs` caps worker threads; output does
/// not depend on it.
pub fn run_batch(cfg: &SimConfig, jobs: Option<usize>) -> Result<BatchOutput> {
    cfg.validate()?;
    let results = match jobs {
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build()
            .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?
            .install(|| run_all(cfg)),
        None => run_all(cfg),
    };
    let mut cells = Vec::new();
    for &method in &cfg.methods {
        for rho in cfg.rhos() {
            for &k in &cfg.k_values {
                let cell: Vec<ReplicateResult> =
                    results.iter().filter(|r| r.method == method && r.rho == rho && r.k == k).cloned().collect();
                let succeeded = cell.iter().filter(|r| r.succeeded()).count();
                let metrics = aggregate(&cell).ok();
                cells.push(CellSummary {
                    scenario: cfg.scenario.name,
                    method,
                    rho,
                    k,
                    succeeded,
                    failed: cell.len() - succeeded,
                    metrics,
                    single_replicate: succeeded == 1,
                });
            }
        }
    }
    Ok(BatchOutput { results, cells })
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn csv_text(header: &[&str], rows: Vec<Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub const RESULTS_HEADER: [&str; 16] = [
    "scenario",
    "method",
    "rho",
    "k",
    "replicate",
    "seed",
    "n_t",
    "n_sets",
    "estimator",
    "tau_hat",
    "satt_target",
    "gamma_star",
    "gamma_flag",
    "invariants_ok",
    "diagnostics",
    "error",
];

pub fn results_csv(results: &[ReplicateResult]) -> Result<String> {
    let rows = results
        .iter()
        .map(|r| {
            vec![
                r.scenario.as_str().to_string(),
                r.method.to_string(),
                fmt_f64(r.rho),
                r.k.to_string(),
                r.replicate.to_string(),
                r.seed.to_string(),
                r.n_t.to_string(),
                r.n_sets.to_string(),
                r.estimator
                    .map(|e| serde_json::to_value(e).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default())
                    .unwrap_or_default(),
                opt(r.tau_hat),
                fmt_f64(r.satt_target),
                opt(r.gamma_star),
                r.gamma_flag.clone().unwrap_or_default(),
                u8::from(r.invariants_ok).to_string(),
                r.diagnostics.join(";"),
                r.error.clone().unwrap_or_default(),
            ]
        })
        .collect();
    csv_text(&RESULTS_HEADER, rows)
}

pub const AGGREGATES_HEADER: [&str; 11] =
    ["scenario", "method", "rho", "k", "succeeded", "failed", "bias", "sd", "mse", "median_gamma", "single_replicate"];

pub fn aggregates_csv(cells: &[CellSummary]) -> Result<String> {
    let rows = cells
        .iter()
        .map(|c| {
            let m = c.metrics;
            vec![
                c.scenario.as_str().to_string(),
                c.method.to_string(),
                fmt_f64(c.rho),
                c.k.to_string(),
                c.succeeded.to_string(),
                c.failed.to_string(),
                opt(m.map(|m| m.bias)),
                opt(m.map(|m| m.sd)),
                opt(m.map(|m| m.mse)),
                opt(m.and_then(|m| m.median_gamma)),
                u8::from(c.single_replicate).to_string(),
            ]
        })
        .collect();
    csv_text(&AGGREGATES_HEADER, rows)
}

/// Run manifest: configuration echo, versions and RNG id. Contains nothing
/// that varies between identical runs.
pub fn manifest(cfg: &SimConfig, out: &BatchOutput) -> serde_json::Value {
    let mut flags = Vec::new();
    if cfg.scenario.name == Scenario::HeterogeneousEffect {
        flags.push("effect_modification_present");
    }
    serde_json::json!({
        "tool": "pilotmatch",
        "version": crate::VERSION,
        "rng_algorithm": RNG_ALGORITHM,
        "config": cfg,
        "cells": out.cells.len(),
        "replicate_rows": out.results.len(),
        "failed_rows": out.results.iter().filter(|r| !r.succeeded()).count(),
        "flags": flags,
    })
}

/// Writes `results.csv`, `aggregates.csv` and `manifest.json` into `dir`.
pub fn write_outputs(dir: impl AsRef<Path>, cfg: &SimConfig, out: &BatchOutput) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("results.csv"), results_csv(&out.results)?)?;
    std::fs::write(dir.join("aggregates.csv"), aggregates_csv(&out.cells)?)?;
    let text = serde_json::to_string_pretty(&manifest(cfg, out))?;
    std::fs::write(dir.join("manifest.json"), text + "\n")?;
    Ok(())
}

/// Median absolute error of the with-replacement estimator at one analysis
/// sample size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatePoint {
    pub target_analysis_n: usize,
    pub mean_analysis_n: f64,
    pub median_abs_error: f64,
    pub failures: usize,
}

/// Error of the M-nearest-neighbour estimator on the joint estimated scores
/// for one dataset: pilot selection and both model fits as in the pilot
/// pipeline (correctly specified), then the estimator over the analysis set.
pub fn tau_theta_error(ds: &Dataset, pilot_seed: u64, m: usize) -> Result<(f64, usize)> {
    let opts = PilotOptions { model: ModelSpec::CorrectlySpecified, auto_lasso: true };
    let propensity = fit_propensity(ds, &opts)?;
    let split = select_pilot(ds, pilot_seed, &opts)?;
    let prognostic = fit_prognostic(ds, &split.pilot, &opts)?;
    let phi = predict_linear(&propensity, &ds.x)?;
    let psi = predict_linear(&prognostic, &ds.x)?;
    let a = &split.analysis;
    let z = nalgebra::DMatrix::from_fn(a.len(), 2, |i, j| if j == 0 { phi[a[i]] } else { psi[a[i]] });
    let cov = sample_covariance(&z)?;
    let t: Vec<u8> = a.iter().map(|&i| ds.t[i]).collect();
    let y: Vec<f64> = a.iter().map(|&i| ds.y[i]).collect();
    let est = tau_theta(&t, &y, &z, m, &cov.inv)?;
    Ok(((est.tau_hat - satt_target(ds)?).abs(), a.len()))
}

/// Least-squares slope of `ys` on `xs`.
pub fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Empirical convergence rate of the with-replacement estimator: for each
/// target analysis size, datasets of `n ≈ target·20/19` units (the pilot
/// removes about one unit in twenty) are drawn from `scenario`, and the
/// median absolute error over `seeds` datasets is recorded. Returns the
/// points and the log-log slope against the mean analysis size.
pub fn theorem2_rate(
    scenario: &ScenarioSpec,
    targets: &[usize],
    seeds: usize,
    base_seed: u64,
) -> Result<(Vec<RatePoint>, f64)> {
    if targets.len() < 2 || seeds == 0 {
        return Err(Error::invalid("need at least two sample sizes and one seed"));
    }
    let mut points = Vec::new();
    for &target in targets {
        let spec = ScenarioSpec { n: ((target as f64) * 20.0 / 19.0).round() as usize, ..*scenario };
        spec.validate()?;
        let stream = derive_seed(base_seed, target as u64);
        let runs: Vec<Option<(f64, usize)>> = (0..seeds)
            .into_par_iter()
            .map(|s| {
                let sd = derive_seeds(stream, s);
                generate(&spec, sd.data).and_then(|ds| tau_theta_error(&ds, sd.pilot, 1)).ok()
            })
            .collect();
        let ok: Vec<(f64, usize)> = runs.iter().flatten().copied().collect();
        if ok.is_empty() {
            return Err(Error::invalid(format!("every replicate failed at size {target}")));
        }
        let mut errs: Vec<f64> = ok.iter().map(|p| p.0).collect();
        errs.sort_by(f64::total_cmp);
        let median = if errs.len() % 2 == 1 {
            errs[errs.len() / 2]
        } else {
            0.5 * (errs[errs.len() / 2 - 1] + errs[errs.len() / 2])
        };
        points.push(RatePoint {
            target_analysis_n: target,
            mean_analysis_n: ok.iter().map(|p| p.1 as f64).sum::<f64>() / ok.len() as f64,
            median_abs_error: median,
            failures: seeds - ok.len(),
        });
    }
    let xs: Vec<f64> = points.iter().map(|p| p.mean_analysis_n.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.median_abs_error.ln()).collect();
    Ok((points, ls_slope(&xs, &ys)))
}
