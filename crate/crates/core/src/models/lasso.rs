//! L1-penalized score models by cyclic coordinate descent.
//!
//! Predictors are standardized (mean 0, population SD 1) before fitting and
//! coefficients are mapped back to the original scale. The gaussian objective
//! is `(1/2n)‖y − b0 − Xb‖² + λ‖b‖₁`, the binomial one `−(1/n)·loglik + λ‖b‖₁`,
//! solved by proximal Newton steps with an inner weighted coordinate descent.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{ModelKind, ScoreModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Gaussian,
    Binomial,
}

const DEFAULT_FOLDS: usize = 10;
const CD_TOL: f64 = 1e-9;
const MAX_SWEEPS: usize = 100_000;
const MAX_OUTER: usize = 200;
const OUTER_TOL: f64 = 1e-9;
const MIN_WEIGHT: f64 = 1e-5;

struct Standardized {
    /// Column-major standardized predictors.
    cols: Vec<Vec<f64>>,
    means: Vec<f64>,
    sds: Vec<f64>,
}

impl Standardized {
    fn new(x: &DMatrix<f64>) -> Self {
        let n = x.nrows() as f64;
        let mut cols = Vec::with_capacity(x.ncols());
        let mut means = Vec::with_capacity(x.ncols());
        let mut sds = Vec::with_capacity(x.ncols());
        for j in 0..x.ncols() {
            let c = x.column(j);
            let mean = c.mean();
            let sd = (c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            let sd = if sd > 1e-12 * mean.abs().max(1.0) { sd } else { 0.0 };
            cols.push(c.iter().map(|v| if sd > 0.0 { (v - mean) / sd } else { 0.0 }).collect());
            means.push(mean);
            sds.push(sd);
        }
        Standardized { cols, means, sds }
    }

    fn n(&self) -> usize {
        self.cols.first().map_or(0, Vec::len)
    }

    fn to_original(&self, b0: f64, b: &[f64]) -> (f64, Vec<f64>) {
        let coef: Vec<f64> =
            b.iter().zip(&self.sds).map(|(bj, sd)| if *sd > 0.0 { bj / sd } else { 0.0 }).collect();
        let intercept = b0 - coef.iter().zip(&self.means).map(|(c, m)| c * m).sum::<f64>();
        (intercept, coef)
    }
}

fn soft(v: f64, lambda: f64) -> f64 {
    if v > lambda {
        v - lambda
    } else if v < -lambda {
        v + lambda
    } else {
        0.0
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

struct Solution {
    b0: f64,
    b: Vec<f64>,
    converged: bool,
    iterations: usize,
}

/// Weighted coordinate descent on `(1/2n) Σ w (r − Δb0 − XΔb)² + λ‖b‖₁`,
/// updating `b0`, `b` and the working residual `r` in place.
fn weighted_cd(
    std: &Standardized,
    w: Option<&[f64]>,
    lambda: f64,
    b0: &mut f64,
    b: &mut [f64],
    r: &mut [f64],
    fit_intercept: bool,
) -> (bool, usize) {
    let n = std.n();
    let nf = n as f64;
    let p = b.len();
    let var: Vec<f64> = (0..p)
        .map(|j| match w {
            None => {
                if std.sds[j] > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Some(w) => std.cols[j].iter().zip(w).map(|(x, wi)| wi * x * x).sum::<f64>() / nf,
        })
        .collect();
    let w_sum = w.map_or(nf, |w| w.iter().sum());

    let sweep = |active_only: bool, b0: &mut f64, b: &mut [f64], r: &mut [f64]| -> f64 {
        let mut max_change: f64 = 0.0;
        if fit_intercept {
            let num: f64 = match w {
                None => r.iter().sum(),
                Some(w) => r.iter().zip(w).map(|(ri, wi)| ri * wi).sum(),
            };
            let delta = num / w_sum;
            if delta != 0.0 {
                *b0 += delta;
                r.iter_mut().for_each(|ri| *ri -= delta);
                max_change = max_change.max(delta.abs());
            }
        }
        for j in 0..p {
            if var[j] == 0.0 || (active_only && b[j] == 0.0) {
                continue;
            }
            let xj = &std.cols[j];
            let grad: f64 = match w {
                None => xj.iter().zip(r.iter()).map(|(x, ri)| x * ri).sum::<f64>() / nf,
                Some(w) => xj.iter().zip(r.iter()).zip(w).map(|((x, ri), wi)| wi * x * ri).sum::<f64>() / nf,
            };
            let new = soft(grad + var[j] * b[j], lambda) / var[j];
            let delta = new - b[j];
            if delta != 0.0 {
                b[j] = new;
                for (ri, x) in r.iter_mut().zip(xj) {
                    *ri -= delta * x;
                }
                max_change = max_change.max(delta.abs() * var[j].sqrt());
            }
        }
        max_change
    };

    let mut sweeps = 0;
    loop {
        sweeps += 1;
        let full_change = sweep(false, b0, b, r);
        if full_change < CD_TOL {
            return (true, sweeps);
        }
        if sweeps >= MAX_SWEEPS {
            return (false, sweeps);
        }
        loop {
            sweeps += 1;
            if sweep(true, b0, b, r) < CD_TOL || sweeps >= MAX_SWEEPS {
                break;
            }
        }
    }
}

fn gaussian_fit(std: &Standardized, y: &[f64], lambda: f64, start: Option<&Solution>) -> Solution {
    let p = std.cols.len();
    let mut b0 = start.map_or(0.0, |s| s.b0);
    let mut b = start.map_or_else(|| vec![0.0; p], |s| s.b.clone());
    let mut r: Vec<f64> = (0..std.n())
        .map(|i| y[i] - b0 - (0..p).map(|j| std.cols[j][i] * b[j]).sum::<f64>())
        .collect();
    let (converged, iterations) = weighted_cd(std, None, lambda, &mut b0, &mut b, &mut r, true);
    Solution { b0, b, converged, iterations }
}

fn binomial_objective(std: &Standardized, y: &[f64], lambda: f64, b0: f64, b: &[f64]) -> f64 {
    let n = std.n();
    let nll: f64 = (0..n)
        .map(|i| {
            let eta = b0 + b.iter().enumerate().map(|(j, bj)| std.cols[j][i] * bj).sum::<f64>();
            let log1pexp = if eta > 0.0 { eta + (-eta).exp().ln_1p() } else { eta.exp().ln_1p() };
            log1pexp - y[i] * eta
        })
        .sum();
    nll / n as f64 + lambda * b.iter().map(|v| v.abs()).sum::<f64>()
}

fn binomial_fit(std: &Standardized, y: &[f64], lambda: f64, start: Option<&Solution>) -> Solution {
    let n = std.n();
    let p = std.cols.len();
    let mean = y.iter().sum::<f64>() / n as f64;
    let mut b0 = start.map_or((mean / (1.0 - mean)).ln(), |s| s.b0);
    let mut b = start.map_or_else(|| vec![0.0; p], |s| s.b.clone());
    let mut objective = binomial_objective(std, y, lambda, b0, &b);
    let mut iterations = 0;

    for _ in 0..MAX_OUTER {
        let eta: Vec<f64> =
            (0..n).map(|i| b0 + (0..p).map(|j| std.cols[j][i] * b[j]).sum::<f64>()).collect();
        let prob: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
        let w: Vec<f64> = prob.iter().map(|&q| (q * (1.0 - q)).max(MIN_WEIGHT)).collect();
        let mut r: Vec<f64> = (0..n).map(|i| (y[i] - prob[i]) / w[i]).collect();
        let (mut nb0, mut nb) = (b0, b.clone());
        let (_, sweeps) = weighted_cd(std, Some(&w), lambda, &mut nb0, &mut nb, &mut r, true);
        iterations += sweeps;

        // Backtrack along the Newton direction if the objective went up.
        let mut t = 1.0;
        let (mut cb0, mut cb) = (nb0, nb.clone());
        let mut candidate = binomial_objective(std, y, lambda, cb0, &cb);
        while candidate > objective + 1e-15 && t > 1e-8 {
            t *= 0.5;
            cb0 = b0 + t * (nb0 - b0);
            cb = b.iter().zip(&nb).map(|(o, nw)| o + t * (nw - o)).collect();
            candidate = binomial_objective(std, y, lambda, cb0, &cb);
        }
        let change = (cb0 - b0)
            .abs()
            .max(b.iter().zip(&cb).map(|(o, nw)| (o - nw).abs()).fold(0.0, f64::max));
        b0 = cb0;
        b = cb;
        objective = candidate.min(objective);
        if change < OUTER_TOL {
            return Solution { b0, b, converged: true, iterations };
        }
    }
    Solution { b0, b, converged: false, iterations }
}

/// Training deviance of a standardized-scale binomial fit.
fn binomial_deviance(std: &Standardized, y: &[f64], b0: f64, b: &[f64]) -> f64 {
    (0..std.n())
        .map(|i| deviance(Family::Binomial, y[i], b0 + b.iter().enumerate().map(|(j, bj)| std.cols[j][i] * bj).sum::<f64>()))
        .sum()
}

/// Fits the path from the largest penalty down. Binomial paths stop early
/// once the fit is nearly saturated (deviance ratio ≥ 0.999) or the deviance
/// ratio stops improving (relative gain < 1e-5); penalties below the stop
/// are `None`.
fn fit_path(std: &Standardized, y: &[f64], family: Family, lambdas: &[f64]) -> Vec<Option<Solution>> {
    let mut order: Vec<usize> = (0..lambdas.len()).collect();
    order.sort_by(|&a, &b| lambdas[b].total_cmp(&lambdas[a]));
    let mut out: Vec<Option<Solution>> = (0..lambdas.len()).map(|_| None).collect();
    let mut prev: Option<Solution> = None;
    let null_dev = match family {
        Family::Gaussian => 0.0,
        Family::Binomial => {
            let mean = y.iter().sum::<f64>() / y.len() as f64;
            y.iter().map(|&v| deviance(family, v, (mean / (1.0 - mean)).ln())).sum::<f64>()
        }
    };
    let mut prev_ratio: Option<f64> = None;
    for idx in order {
        let sol = match family {
            Family::Gaussian => gaussian_fit(std, y, lambdas[idx], prev.as_ref()),
            Family::Binomial => binomial_fit(std, y, lambdas[idx], prev.as_ref()),
        };
        prev = Some(Solution { b0: sol.b0, b: sol.b.clone(), converged: sol.converged, iterations: 0 });
        let stop = family == Family::Binomial && null_dev > 0.0 && {
            let ratio = 1.0 - binomial_deviance(std, y, sol.b0, &sol.b) / null_dev;
            let stalled = prev_ratio.is_some_and(|r| ratio > 0.0 && ratio - r < 1e-5 * ratio);
            prev_ratio = Some(ratio);
            ratio >= 0.999 || stalled
        };
        out[idx] = Some(sol);
        if stop {
            break;
        }
    }
    out
}

fn check_inputs(x: &DMatrix<f64>, target: &[f64], family: Family) -> Result<()> {
    if target.len() != x.nrows() {
        return Err(Error::Dimension(format!("X has {} rows, target has {}", x.nrows(), target.len())));
    }
    if family == Family::Binomial {
        if target.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::invalid("binomial target must be 0/1"));
        }
        let ones = target.iter().filter(|&&v| v == 1.0).count();
        if ones == 0 || ones == target.len() {
            return Err(Error::ModelFit("single-class binomial target".into()));
        }
    }
    Ok(())
}

/// Largest penalty with a nonzero slope, then 50 log-spaced values down to
/// 1e-3 of it (gaussian) or 1e-2 of it (binomial, where small penalties
/// approach separation and the path stops being informative).
pub fn default_lambda_grid(x: &DMatrix<f64>, target: &[f64], family: Family) -> Result<Vec<f64>> {
    check_inputs(x, target, family)?;
    let std = Standardized::new(x);
    let n = target.len() as f64;
    let mean = target.iter().sum::<f64>() / n;
    let lambda_max = std
        .cols
        .iter()
        .map(|c| (c.iter().zip(target).map(|(x, y)| x * (y - mean)).sum::<f64>() / n).abs())
        .fold(0.0, f64::max);
    if lambda_max == 0.0 {
        return Ok(vec![0.0]);
    }
    let steps = 50;
    let min_ratio: f64 = match family {
        Family::Gaussian => 1e-3,
        Family::Binomial => 1e-2,
    };
    Ok((0..steps)
        .map(|k| lambda_max * min_ratio.powf(k as f64 / (steps - 1) as f64))
        .collect())
}

fn fold_ids(target: &[f64], family: Family, folds: usize) -> Vec<usize> {
    let n = target.len();
    let mut ids = vec![0; n];
    match family {
        Family::Gaussian => {
            for (i, id) in ids.iter_mut().enumerate() {
                *id = i % folds;
            }
        }
        Family::Binomial => {
            let mut k = 0;
            for class in [0.0, 1.0] {
                for i in (0..n).filter(|&i| target[i] == class) {
                    ids[i] = k % folds;
                    k += 1;
                }
            }
        }
    }
    ids
}

fn deviance(family: Family, y: f64, eta: f64) -> f64 {
    match family {
        Family::Gaussian => (y - eta).powi(2),
        Family::Binomial => {
            let p = sigmoid(eta).clamp(1e-12, 1.0 - 1e-12);
            -2.0 * (y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        }
    }
}

/// Lasso fit with the penalty chosen by 10-fold cross-validation (minimum
/// mean deviance).
pub fn fit_lasso(x: &DMatrix<f64>, target: &[f64], family: Family, lambda_grid: &[f64]) -> Result<ScoreModel> {
    fit_lasso_with_folds(x, target, family, lambda_grid, DEFAULT_FOLDS)
}

pub fn fit_lasso_with_folds(
    x: &DMatrix<f64>,
    target: &[f64],
    family: Family,
    lambda_grid: &[f64],
    folds: usize,
) -> Result<ScoreModel> {
    check_inputs(x, target, family)?;
    if lambda_grid.is_empty() {
        return Err(Error::invalid("empty lambda grid"));
    }
    if lambda_grid.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
        return Err(Error::invalid("lambda values must be finite and non-negative"));
    }
    let n = x.nrows();
    if folds < 2 || n < 2 * folds {
        return Err(Error::invalid(format!("{folds}-fold cross-validation needs at least {} units", 2 * folds)));
    }

    let chosen = if lambda_grid.len() == 1 {
        lambda_grid[0]
    } else {
        let ids = fold_ids(target, family, folds);
        if family == Family::Binomial {
            for f in 0..folds {
                let classes: Vec<f64> = (0..n).filter(|&i| ids[i] == f).map(|i| target[i]).collect();
                if !classes.contains(&0.0) || !classes.contains(&1.0) {
                    return Err(Error::invalid(format!("cross-validation fold {} is missing a class", f + 1)));
                }
            }
        }
        let mut total = vec![0.0; lambda_grid.len()];
        for f in 0..folds {
            let train: Vec<usize> = (0..n).filter(|&i| ids[i] != f).collect();
            let test: Vec<usize> = (0..n).filter(|&i| ids[i] == f).collect();
            let std = Standardized::new(&x.select_rows(&train));
            let yt: Vec<f64> = train.iter().map(|&i| target[i]).collect();
            for (l, sol) in fit_path(&std, &yt, family, lambda_grid).into_iter().enumerate() {
                let Some(sol) = sol else {
                    total[l] = f64::INFINITY;
                    continue;
                };
                let (b0, coef) = std.to_original(sol.b0, &sol.b);
                total[l] += test
                    .iter()
                    .map(|&i| {
                        let eta = b0 + (0..x.ncols()).map(|j| x[(i, j)] * coef[j]).sum::<f64>();
                        deviance(family, target[i], eta)
                    })
                    .sum::<f64>();
            }
        }
        // Ties go to the larger penalty; penalties some fold did not reach
        // carry infinite deviance.
        let mut best = (0..lambda_grid.len()).max_by(|&a, &b| lambda_grid[a].total_cmp(&lambda_grid[b])).unwrap_or(0);
        for l in 0..lambda_grid.len() {
            let better = total[l] < total[best]
                || (total[l] == total[best] && lambda_grid[l] > lambda_grid[best]);
            if better {
                best = l;
            }
        }
        lambda_grid[best]
    };

    let std = Standardized::new(x);
    let mut path: Vec<f64> = lambda_grid.iter().copied().filter(|&l| l >= chosen).collect();
    path.sort_by(|a, b| b.total_cmp(a));
    let sols = fit_path(&std, target, family, &path);
    let (chosen, sol) = path
        .iter()
        .zip(sols)
        .filter_map(|(&l, s)| s.map(|s| (l, s)))
        .last()
        .expect("the largest penalty is always fitted");
    let (intercept, coef) = std.to_original(sol.b0, &sol.b);
    Ok(ScoreModel {
        kind: match family {
            Family::Gaussian => ModelKind::LassoOls,
            Family::Binomial => ModelKind::LassoLogistic,
        },
        intercept,
        coef,
        lambda: Some(chosen),
        converged: sol.converged,
        iterations: sol.iterations,
        columns: None,
    })
}

/// Largest violation of the lasso optimality conditions on the standardized
/// scale: `|g_j| ≤ λ` for zero slopes, `g_j = λ·sign(b_j)` for active ones, and
/// a zero intercept gradient.
pub fn lasso_kkt_violation(model: &ScoreModel, x: &DMatrix<f64>, target: &[f64], family: Family) -> Result<f64> {
    check_inputs(x, target, family)?;
    let lambda = model.lambda.ok_or_else(|| Error::invalid("model carries no lambda"))?;
    if model.coef.len() != x.ncols() {
        return Err(Error::Dimension("coefficient count differs from X".into()));
    }
    let std = Standardized::new(x);
    let n = x.nrows();
    let resid: Vec<f64> = (0..n)
        .map(|i| {
            let eta = model.intercept + (0..x.ncols()).map(|j| x[(i, j)] * model.coef[j]).sum::<f64>();
            let mu = match family {
                Family::Gaussian => eta,
                Family::Binomial => sigmoid(eta),
            };
            target[i] - mu
        })
        .collect();
    let mut worst = (resid.iter().sum::<f64>() / n as f64).abs();
    for j in 0..x.ncols() {
        if std.sds[j] == 0.0 {
            continue;
        }
        let g = std.cols[j].iter().zip(&resid).map(|(a, r)| a * r).sum::<f64>() / n as f64;
        let b = model.coef[j] * std.sds[j];
        let v = if b == 0.0 { (g.abs() - lambda).max(0.0) } else { (g - lambda * b.signum()).abs() };
        worst = worst.max(v);
    }
    Ok(worst)
}
