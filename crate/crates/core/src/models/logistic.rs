use nalgebra::{DMatrix, DVector};

use super::{with_intercept, ModelKind, ScoreModel};
use crate::error::{Error, Result};

const MAX_ITER: usize = 100;
const SCORE_TOL: f64 = 1e-8;
/// Linear predictors beyond this magnitude are treated as (quasi-)separation.
const ETA_LIMIT: f64 = 35.0;
/// Ridge penalty on the slopes used when the unpenalized fit separates.
pub const RIDGE_FALLBACK: f64 = 1e-4;

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Bernoulli log-likelihood with logit link.
pub fn logistic_log_likelihood(x: &DMatrix<f64>, t: &[u8], intercept: f64, coef: &[f64]) -> f64 {
    (0..x.nrows())
        .map(|i| {
            let eta = intercept + (0..x.ncols()).map(|j| x[(i, j)] * coef[j]).sum::<f64>();
            // log(1 + e^eta), evaluated without overflow
            let log1pexp = if eta > 0.0 { eta + (-eta).exp().ln_1p() } else { eta.exp().ln_1p() };
            t[i] as f64 * eta - log1pexp
        })
        .sum()
}

/// Score vector `[1 X]ᵀ (t − p̂)`; intercept component first.
pub fn logistic_score(x: &DMatrix<f64>, t: &[u8], intercept: f64, coef: &[f64]) -> Vec<f64> {
    let mut score = vec![0.0; x.ncols() + 1];
    for i in 0..x.nrows() {
        let eta = intercept + (0..x.ncols()).map(|j| x[(i, j)] * coef[j]).sum::<f64>();
        let r = t[i] as f64 - sigmoid(eta);
        score[0] += r;
        for j in 0..x.ncols() {
            score[j + 1] += x[(i, j)] * r;
        }
    }
    score
}

enum Outcome {
    Converged(DVector<f64>, usize),
    Stalled(DVector<f64>, usize),
    Separated,
}

fn irls(a: &DMatrix<f64>, t: &DVector<f64>, ridge: f64) -> Result<Outcome> {
    let (n, q) = a.shape();
    let mean = t.mean();
    let mut beta = DVector::zeros(q);
    beta[0] = (mean / (1.0 - mean)).ln();

    let penalized_loglik = |beta: &DVector<f64>| -> f64 {
        let eta = a * beta;
        let ll: f64 = (0..n)
            .map(|i| {
                let e = eta[i];
                let log1pexp = if e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() };
                t[i] * e - log1pexp
            })
            .sum();
        ll - 0.5 * ridge * beta.rows(1, q - 1).norm_squared()
    };

    let mut current = penalized_loglik(&beta);
    for iter in 0..=MAX_ITER {
        let eta = a * &beta;
        if ridge == 0.0 && eta.amax() > ETA_LIMIT {
            return Ok(Outcome::Separated);
        }
        let prob = eta.map(sigmoid);
        let mut score = a.tr_mul(&(t - &prob));
        for j in 1..q {
            score[j] -= ridge * beta[j];
        }
        if score.amax() < SCORE_TOL {
            return Ok(Outcome::Converged(beta, iter));
        }
        if iter == MAX_ITER {
            return Ok(Outcome::Stalled(beta, iter));
        }
        let w = prob.map(|p| (p * (1.0 - p)).max(1e-300));
        let wa = DMatrix::from_fn(n, q, |i, j| a[(i, j)] * w[i]);
        let mut hess = a.tr_mul(&wa);
        for j in 1..q {
            hess[(j, j)] += ridge;
        }
        let step = match hess.cholesky() {
            Some(ch) => ch.solve(&score),
            None if ridge == 0.0 => return Ok(Outcome::Separated),
            None => return Err(Error::ModelFit("singular weighted normal equations".into())),
        };
        // Newton step with halving; the penalized log-likelihood is concave.
        let mut scale = 1.0;
        loop {
            let trial = &beta + &step * scale;
            let value = penalized_loglik(&trial);
            if value >= current - 1e-12 * current.abs().max(1.0) || scale < 1e-10 {
                beta = trial;
                current = value;
                break;
            }
            scale *= 0.5;
        }
        if !beta.iter().all(|b| b.is_finite()) {
            if ridge == 0.0 {
                return Ok(Outcome::Separated);
            }
            return Err(Error::ModelFit("non-finite coefficients".into()));
        }
    }
    unreachable!()
}

/// Logistic regression by iteratively reweighted least squares.
///
/// Converges when the max-norm of the score is below 1e-8 within 100
/// iterations. Separated or stalled fits are refitted with a 1e-4 ridge on the
/// slopes and reported with `converged = false`.
pub fn fit_logistic(x: &DMatrix<f64>, t: &[u8]) -> Result<ScoreModel> {
    let (n, p) = x.shape();
    if t.len() != n {
        return Err(Error::Dimension(format!("X has {n} rows, T has {}", t.len())));
    }
    if n <= p + 1 {
        return Err(Error::invalid(format!("logistic fit needs n > p + 1 (n = {n}, p = {p})")));
    }
    let n_treated = t.iter().filter(|&&v| v == 1).count();
    if n_treated == 0 || n_treated == n {
        return Err(Error::ModelFit("single-class treatment vector".into()));
    }
    let a = with_intercept(x);
    let tv = DVector::from_iterator(n, t.iter().map(|&v| v as f64));

    let (beta, converged, iterations) = match irls(&a, &tv, 0.0)? {
        Outcome::Converged(beta, it) => (beta, true, it),
        Outcome::Stalled(_, _) | Outcome::Separated => match irls(&a, &tv, RIDGE_FALLBACK)? {
            Outcome::Converged(beta, it) | Outcome::Stalled(beta, it) => (beta, false, it),
            Outcome::Separated => unreachable!("ridge fits never report separation"),
        },
    };
    Ok(ScoreModel {
        kind: ModelKind::Logistic,
        intercept: beta[0],
        coef: beta.iter().skip(1).copied().collect(),
        lambda: None,
        converged,
        iterations,
        columns: None,
    })
}
