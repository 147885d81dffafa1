use nalgebra::{DMatrix, DVector};

use super::{ModelKind, ScoreModel};
use crate::error::{Error, Result};

/// Relative singular-value threshold below which the centered design is
/// considered rank deficient.
const RANK_TOL: f64 = 1e-10;

/// Least squares of `y` on `[1 X]`, solved through an SVD of the centered design.
pub fn fit_ols(x: &DMatrix<f64>, y: &[f64]) -> Result<ScoreModel> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::Dimension(format!("X has {n} rows, Y has {}", y.len())));
    }
    if n <= p + 1 {
        return Err(Error::invalid(format!(
            "least squares needs n > p + 1 (n = {n}, p = {p}); use a penalized fit"
        )));
    }
    let means: Vec<f64> = (0..p).map(|j| x.column(j).mean()).collect();
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let xc = DMatrix::from_fn(n, p, |i, j| x[(i, j)] - means[j]);
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));

    let svd = xc.svd(true, true);
    let s_max = svd.singular_values.max();
    let s_min = svd.singular_values.min();
    if !(s_max > 0.0) || s_min <= RANK_TOL * s_max {
        return Err(Error::ModelFit(format!(
            "design is rank deficient (singular values {s_min:e} .. {s_max:e})"
        )));
    }
    let beta = svd.solve(&yc, 0.0).map_err(|e| Error::ModelFit(e.to_string()))?;
    let intercept = y_mean - means.iter().zip(beta.iter()).map(|(m, b)| m * b).sum::<f64>();
    Ok(ScoreModel {
        kind: ModelKind::Ols,
        intercept,
        coef: beta.iter().copied().collect(),
        lambda: None,
        converged: true,
        iterations: 1,
        columns: None,
    })
}
