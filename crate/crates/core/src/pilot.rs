//! Pilot matching: hold out one control per treated unit, learn the
//! prognostic score on those held-out controls, then match the remaining
//! units jointly on estimated propensity and prognostic scores.

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dataset::Dataset;
use crate::distance::{build_distances, DistanceMatrix, Features};
use crate::error::{Error, Result};
use crate::matched::{Matching, PilotSplit};
use crate::matching::{full_match, optimal_k_match};
use crate::models::{default_lambda_grid, fit_lasso, fit_logistic, fit_ols, predict_linear, Family, ScoreModel};
use crate::rng::SimRng;

/// Which covariates the score models (and raw-covariate distances) use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSpec {
    /// Unpenalized fits on every measured covariate.
    #[default]
    OverSpecified,
    /// Unpenalized fits on the two covariates that drive the scores.
    CorrectlySpecified,
    /// Cross-validated lasso fits on every covariate.
    Lasso,
}

impl ModelSpec {
    /// Covariate columns used by models and raw distances (`None` = all).
    pub fn columns(self) -> Option<&'static [usize]> {
        match self {
            ModelSpec::CorrectlySpecified => Some(&[0, 1]),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PilotOptions {
    pub model: ModelSpec,
    /// Switch the prognostic fit to the lasso when the pilot set is too small
    /// for least squares; otherwise that case is an error.
    pub auto_lasso: bool,
}

impl Default for PilotOptions {
    fn default() -> Self {
        PilotOptions { model: ModelSpec::OverSpecified, auto_lasso: true }
    }
}

/// Control-to-treated structure of the final matching.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MatchRatio {
    Fixed(usize),
    Full { min_ratio: f64, max_ratio: f64 },
}

impl MatchRatio {
    pub fn k(self) -> Option<usize> {
        match self {
            MatchRatio::Fixed(k) => Some(k),
            MatchRatio::Full { .. } => None,
        }
    }
}

/// Matches on a distance matrix with the given ratio.
pub fn match_with_ratio(dm: &DistanceMatrix, ratio: MatchRatio) -> Result<Matching> {
    match ratio {
        MatchRatio::Fixed(k) => optimal_k_match(dm, k),
        MatchRatio::Full { min_ratio, max_ratio } => full_match(dm, min_ratio, max_ratio),
    }
}

fn design(ds: &Dataset, spec: ModelSpec, rows: Option<&[usize]>) -> Result<nalgebra::DMatrix<f64>> {
    let x = ds.columns(spec.columns())?;
    Ok(match rows {
        Some(r) => x.select_rows(r),
        None => x,
    })
}

fn restrict(model: ScoreModel, spec: ModelSpec) -> ScoreModel {
    match spec.columns() {
        Some(c) => model.on_columns(c),
        None => model,
    }
}

/// Propensity model on every unit of the dataset.
pub fn fit_propensity(ds: &Dataset, opts: &PilotOptions) -> Result<ScoreModel> {
    let x = design(ds, opts.model, None)?;
    let model = match opts.model {
        ModelSpec::Lasso => {
            let t: Vec<f64> = ds.t.iter().map(|&v| f64::from(v)).collect();
            let grid = default_lambda_grid(&x, &t, Family::Binomial)?;
            fit_lasso(&x, &t, Family::Binomial, &grid)?
        }
        _ => fit_logistic(&x, &ds.t)?,
    };
    Ok(restrict(model, opts.model))
}

/// Prognostic model: outcome regressed on covariates over the pilot units.
pub fn fit_prognostic(ds: &Dataset, pilot: &[usize], opts: &PilotOptions) -> Result<ScoreModel> {
    let x = design(ds, opts.model, Some(pilot))?;
    let y: Vec<f64> = pilot.iter().map(|&i| ds.y[i]).collect();
    let lasso = |x: &nalgebra::DMatrix<f64>| -> Result<ScoreModel> {
        let grid = default_lambda_grid(x, &y, Family::Gaussian)?;
        fit_lasso(x, &y, Family::Gaussian, &grid)
    };
    let model = match opts.model {
        ModelSpec::Lasso => lasso(&x)?,
        _ if pilot.len() <= x.ncols() + 1 => {
            if !opts.auto_lasso {
                return Err(Error::invalid(format!(
                    "pilot set of {} units is too small for least squares on {} covariates; use the lasso",
                    pilot.len(),
                    x.ncols()
                )));
            }
            lasso(&x)?
        }
        _ => fit_ols(&x, &y)?,
    };
    Ok(restrict(model, opts.model))
}

/// Optimal 1:2 raw-covariate match of every treated unit, then one control
/// per pair drawn uniformly into the pilot set.
pub fn select_pilot(ds: &Dataset, seed: u64, opts: &PilotOptions) -> Result<PilotSplit> {
    let n_t = ds.n_treated();
    let n_c = ds.n() - n_t;
    if n_c < 2 * n_t {
        return Err(Error::Infeasible(format!(
            "pilot selection needs 2 controls per treated unit: {n_t} treated, {n_c} controls"
        )));
    }
    let dm = build_distances(ds, Features::Raw(opts.model.columns()), None)?;
    let pairs = optimal_k_match(&dm, 2)?;
    let mut rng = SimRng::new(seed);
    let mut in_pilot = vec![false; ds.n()];
    for set in &pairs.sets {
        in_pilot[set.controls[rng.below(set.controls.len())]] = true;
    }
    let (pilot, analysis) = (0..ds.n()).partition(|&i| in_pilot[i]);
    Ok(PilotSplit { pilot, analysis })
}

/// Everything the pipeline learns before the final match: score models,
/// the split, per-unit score predictions and the analysis-set distances.
#[derive(Debug, Clone)]
pub struct PilotFit {
    pub seed: u64,
    pub propensity: ScoreModel,
    pub prognostic: ScoreModel,
    pub split: PilotSplit,
    /// Estimated logit propensity for every unit.
    pub phi_hat: Vec<f64>,
    /// Estimated prognostic score for every unit.
    pub psi_hat: Vec<f64>,
    /// Joint-score distances over the analysis set.
    pub distances: DistanceMatrix,
}

/// Result of [`run_pilot_pipeline`].
#[derive(Debug, Clone)]
pub struct PilotRun {
    pub fit: PilotFit,
    pub matching: Matching,
}

/// Fits both score models and prepares analysis-set distances. Outcomes of
/// analysis units are never read.
pub fn prepare_pilot(ds: &Dataset, seed: u64, opts: &PilotOptions) -> Result<PilotFit> {
    ds.validate()?;
    let propensity = fit_propensity(ds, opts)?;
    let split = select_pilot(ds, seed, opts)?;
    let prognostic = fit_prognostic(ds, &split.pilot, opts)?;
    let phi_hat = predict_linear(&propensity, &ds.x)?;
    let psi_hat = predict_linear(&prognostic, &ds.x)?;
    let distances = build_distances(ds, Features::Score2d(&phi_hat, &psi_hat), Some(&split.analysis))?;
    Ok(PilotFit { seed, propensity, prognostic, split, phi_hat, psi_hat, distances })
}

impl PilotFit {
    pub fn match_analysis(&self, ratio: MatchRatio) -> Result<Matching> {
        match_with_ratio(&self.distances, ratio)
    }
}

/// Full pilot pipeline: propensity fit on all units, pilot selection,
/// prognostic fit on the pilot, and the final match on the analysis set.
pub fn run_pilot_pipeline(ds: &Dataset, ratio: MatchRatio, seed: u64, opts: &PilotOptions) -> Result<PilotRun> {
    let fit = prepare_pilot(ds, seed, opts)?;
    let matching = fit.match_analysis(ratio)?;
    Ok(PilotRun { fit, matching })
}

impl PilotRun {
    /// Audit record: seed, pilot units (1-based), both models and a reference
    /// to the matching CSV.
    pub fn audit_json(&self, matching_csv: &str) -> serde_json::Value {
        json!({
            "seed": self.fit.seed,
            "pilot_units": self.fit.split.pilot.iter().map(|i| i + 1).collect::<Vec<_>>(),
            "propensity_model": self.fit.propensity,
            "prognostic_model": self.fit.prognostic,
            "matching_csv": matching_csv,
            "n_sets": self.matching.sets.len(),
        })
    }
}
