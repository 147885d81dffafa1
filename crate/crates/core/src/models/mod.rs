//! Propensity and prognostic score models.
//!
//! All models are linear predictors. The propensity score is used on the
//! logit scale everywhere downstream, so [`predict_linear`] never applies a
//! link function.

mod lasso;
mod logistic;
mod ols;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use lasso::{default_lambda_grid, fit_lasso, fit_lasso_with_folds, lasso_kkt_violation, Family};
pub use logistic::{fit_logistic, logistic_log_likelihood, logistic_score, RIDGE_FALLBACK};
pub use ols::fit_ols;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Logistic,
    Ols,
    LassoLogistic,
    LassoOls,
}

impl ModelKind {
    pub fn is_lasso(self) -> bool {
        matches!(self, ModelKind::LassoLogistic | ModelKind::LassoOls)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreModel {
    pub kind: ModelKind,
    pub intercept: f64,
    /// One slope per design column.
    pub coef: Vec<f64>,
    pub lambda: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Columns of the full covariate matrix the model was fitted on, when a
    /// subset was used. `None` means every column, in order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub columns: Option<Vec<usize>>,
}

impl ScoreModel {
    /// Restricts the model to a column subset of a wider covariate matrix.
    pub fn on_columns(mut self, columns: &[usize]) -> Self {
        self.columns = Some(columns.to_vec());
        self
    }

    /// Serializes as `kind,lambda,term,value` rows.
    pub fn to_csv_string(&self) -> String {
        let kind = serde_json::to_value(self.kind).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        let lambda = self.lambda.map(|l| format!("{l:?}")).unwrap_or_default();
        let mut out = String::from("kind,lambda,term,value\n");
        out.push_str(&format!("{kind},{lambda},intercept,{:?}\n", self.intercept));
        for (j, b) in self.coef.iter().enumerate() {
            let col = self.columns.as_ref().map_or(j, |c| c[j]);
            out.push_str(&format!("{kind},{lambda},x{},{b:?}\n", col + 1));
        }
        out
    }
}

/// Linear predictor `intercept + X·coef` for every row of `x`.
pub fn predict_linear(model: &ScoreModel, x: &DMatrix<f64>) -> Result<Vec<f64>> {
    let cols: Vec<usize> = match &model.columns {
        Some(cols) => {
            if cols.len() != model.coef.len() {
                return Err(Error::Dimension("model column list does not match coefficients".into()));
            }
            if let Some(&bad) = cols.iter().find(|&&c| c >= x.ncols()) {
                return Err(Error::Dimension(format!("model uses column {} but X has {}", bad + 1, x.ncols())));
            }
            cols.clone()
        }
        None => {
            if x.ncols() != model.coef.len() {
                return Err(Error::Dimension(format!(
                    "X has {} columns, model has {} coefficients",
                    x.ncols(),
                    model.coef.len()
                )));
            }
            (0..x.ncols()).collect()
        }
    };
    Ok((0..x.nrows())
        .map(|i| model.intercept + cols.iter().zip(&model.coef).map(|(&c, b)| x[(i, c)] * b).sum::<f64>())
        .collect())
}

/// Prepends a column of ones.
pub(crate) fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.clone().insert_column(0, 1.0)
}
