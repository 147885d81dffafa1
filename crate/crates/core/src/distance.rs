//! Covariance estimation and treated×control distance matrices.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::dataset::{fmt_f64, Dataset};
use crate::error::{Error, Result};
use crate::matched::FeatureSpace;

const MAX_CONDITION: f64 = 1e12;
const RIDGE_FACTOR: f64 = 1e-8;

/// Sample covariance, its inverse and a whitening factor `L` with
/// `inv = L·Lᵀ`, so that Mahalanobis distance is Euclidean distance between
/// rows of `F·L`.
#[derive(Debug, Clone)]
pub struct Covariance {
    pub cov: DMatrix<f64>,
    pub inv: DMatrix<f64>,
    pub ridged: bool,
    whitener: DMatrix<f64>,
}

impl Covariance {
    pub fn dim(&self) -> usize {
        self.cov.nrows()
    }

    /// Rows of `f` mapped into the whitened space.
    pub fn whiten(&self, f: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if f.ncols() != self.dim() {
            return Err(Error::Dimension(format!("features have {} columns, covariance is {}x{0}", f.ncols(), self.dim())));
        }
        Ok(f * &self.whitener)
    }
}

/// Unbiased sample covariance of the rows of `f`. A ridge of
/// `1e-8·trace/q` is added when the condition number exceeds 1e12.
pub fn sample_covariance(f: &DMatrix<f64>) -> Result<Covariance> {
    let (m, q) = f.shape();
    if m < 2 {
        return Err(Error::invalid(format!("covariance needs at least 2 rows, got {m}")));
    }
    if q == 0 {
        return Err(Error::Dimension("covariance of zero columns".into()));
    }
    let means = f.row_mean();
    let mut centered = f.clone();
    for mut row in centered.row_iter_mut() {
        row -= &means;
    }
    let mut cov = centered.transpose() * &centered / (m as f64 - 1.0);
    cov = (&cov + cov.transpose()) * 0.5;

    let eig = SymmetricEigen::new(cov.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let ridged = !(min > 0.0 && max / min <= MAX_CONDITION);
    if ridged {
        let trace = cov.trace();
        let ridge = if trace > 0.0 { RIDGE_FACTOR * trace / q as f64 } else { RIDGE_FACTOR };
        for i in 0..q {
            cov[(i, i)] += ridge;
        }
    }
    let chol = cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Degenerate("covariance is not positive definite".into()))?;
    let inv = chol.inverse();
    let inv = (&inv + inv.transpose()) * 0.5;
    let whitener = inv
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Degenerate("inverse covariance is not positive definite".into()))?
        .l();
    Ok(Covariance { cov, inv, ridged, whitener })
}

/// `√((u−v)ᵀ inv (u−v))`.
pub fn mahalanobis(u: &[f64], v: &[f64], inv: &DMatrix<f64>) -> Result<f64> {
    let q = u.len();
    if v.len() != q || inv.nrows() != q || inv.ncols() != q {
        return Err(Error::Dimension(format!(
            "vectors of length {} and {} with a {}x{} inverse covariance",
            q,
            v.len(),
            inv.nrows(),
            inv.ncols()
        )));
    }
    let diff: Vec<f64> = u.iter().zip(v).map(|(a, b)| a - b).collect();
    let mut form = 0.0;
    let mut scale = 0.0;
    for i in 0..q {
        for j in 0..q {
            let term = diff[i] * inv[(i, j)] * diff[j];
            form += term;
            scale += term.abs();
        }
    }
    if form < -1e-12 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::Degenerate(format!("negative quadratic form {form}")));
    }
    Ok(form.max(0.0).sqrt())
}

/// Per-unit vectors for the distance computation, indexed by unit over the
/// whole dataset.
#[derive(Debug, Clone, Copy)]
pub enum Features<'a> {
    /// Rows of X, optionally restricted to the given columns.
    Raw(Option<&'a [usize]>),
    /// Linear-predictor (logit) propensity scores.
    Propensity(&'a [f64]),
    /// Joint (propensity, prognostic) scores.
    Score2d(&'a [f64], &'a [f64]),
}

impl Features<'_> {
    pub fn space(&self) -> FeatureSpace {
        match self {
            Features::Raw(_) => FeatureSpace::RawCovariates,
            Features::Propensity(_) => FeatureSpace::PropensityScalar,
            Features::Score2d(..) => FeatureSpace::Score2d,
        }
    }

    /// Feature matrix for the given units (one row each).
    pub fn matrix(&self, ds: &Dataset, units: &[usize]) -> Result<DMatrix<f64>> {
        let n = ds.n();
        let check = |len: usize| -> Result<()> {
            if len != n {
                return Err(Error::Dimension(format!("score vector has {len} entries for {n} units")));
            }
            Ok(())
        };
        Ok(match *self {
            Features::Raw(cols) => {
                let x = match cols {
                    Some(c) => {
                        if let Some(&bad) = c.iter().find(|&&j| j >= ds.p()) {
                            return Err(Error::Dimension(format!("column {bad} out of range for p={}", ds.p())));
                        }
                        ds.x.select_columns(c)
                    }
                    None => ds.x.clone(),
                };
                x.select_rows(units)
            }
            Features::Propensity(phi) => {
                check(phi.len())?;
                DMatrix::from_fn(units.len(), 1, |i, _| phi[units[i]])
            }
            Features::Score2d(phi, psi) => {
                check(phi.len())?;
                check(psi.len())?;
                DMatrix::from_fn(units.len(), 2, |i, j| if j == 0 { phi[units[i]] } else { psi[units[i]] })
            }
        })
    }
}

/// Dense treated×control distances, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub d: Vec<f64>,
    pub space: FeatureSpace,
    /// Set when the covariance needed a ridge to be invertible.
    pub ridged: bool,
}

impl DistanceMatrix {
    pub fn new(rows: Vec<usize>, cols: Vec<usize>, d: Vec<f64>, space: FeatureSpace) -> Result<Self> {
        if d.len() != rows.len() * cols.len() {
            return Err(Error::Dimension(format!(
                "{} entries for a {}x{} matrix",
                d.len(),
                rows.len(),
                cols.len()
            )));
        }
        if let Some(v) = d.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::invalid(format!("distance {v} is not finite and non-negative")));
        }
        Ok(DistanceMatrix { rows, cols, d, space, ridged: false })
    }

    /// Matrix with unit labels `0..r` and `r..r+c`, for synthetic instances.
    pub fn from_rows(d: &[Vec<f64>]) -> Result<Self> {
        let r = d.len();
        let c = d.first().map_or(0, Vec::len);
        if d.iter().any(|row| row.len() != c) {
            return Err(Error::Dimension("ragged distance rows".into()));
        }
        let flat = d.iter().flatten().copied().collect();
        Self::new((0..r).collect(), (r..r + c).collect(), flat, FeatureSpace::RawCovariates)
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.cols.len()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.cols.len() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols.len();
        &self.d[i * c..(i + 1) * c]
    }

    /// Same matrix with every entry multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        DistanceMatrix { d: self.d.iter().map(|v| v * factor).collect(), ..self.clone() }
    }

    /// Columns permuted so that new column `j` is old column `perm[j]`.
    pub fn permute_cols(&self, perm: &[usize]) -> Self {
        let c = self.n_cols();
        let d = (0..self.n_rows())
            .flat_map(|i| perm.iter().map(move |&j| i * c + j))
            .map(|idx| self.d[idx])
            .collect();
        DistanceMatrix { cols: perm.iter().map(|&j| self.cols[j]).collect(), d, ..self.clone() }
    }

    /// Long-format CSV (`treated_id,control_id,distance`, 1-based ids).
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("treated_id,control_id,distance\n");
        for (i, &r) in self.rows.iter().enumerate() {
            for (j, &c) in self.cols.iter().enumerate() {
                out.push_str(&format!("{},{},{}\n", r + 1, c + 1, fmt_f64(self.get(i, j))));
            }
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_csv_string().as_bytes())?;
        Ok(())
    }
}

/// Distances between the treated and control units among `units` (all units
/// when `None`). Mahalanobis covariance is estimated from those same units;
/// propensity distances are absolute score differences.
pub fn build_distances(ds: &Dataset, features: Features<'_>, units: Option<&[usize]>) -> Result<DistanceMatrix> {
    let all: Vec<usize>;
    let units = match units {
        Some(u) => u,
        None => {
            all = (0..ds.n()).collect();
            &all
        }
    };
    if let Some(&bad) = units.iter().find(|&&u| u >= ds.n()) {
        return Err(Error::Dimension(format!("unit {bad} out of range for n={}", ds.n())));
    }
    let rows: Vec<usize> = units.iter().copied().filter(|&u| ds.t[u] == 1).collect();
    let cols: Vec<usize> = units.iter().copied().filter(|&u| ds.t[u] == 0).collect();
    let f = features.matrix(ds, units)?;
    let (z, ridged) = match features {
        Features::Propensity(_) => (f, false),
        _ => {
            let cov = sample_covariance(&f)?;
            (cov.whiten(&f)?, cov.ridged)
        }
    };
    let pos: std::collections::HashMap<usize, usize> = units.iter().enumerate().map(|(i, &u)| (u, i)).collect();
    let q = z.ncols();
    let point = |u: usize| -> Vec<f64> { (0..q).map(|j| z[(pos[&u], j)]).collect() };
    let tz: Vec<Vec<f64>> = rows.iter().map(|&u| point(u)).collect();
    let cz: Vec<Vec<f64>> = cols.iter().map(|&u| point(u)).collect();
    let d: Vec<f64> = tz
        .par_iter()
        .flat_map_iter(|a| {
            cz.iter().map(move |b| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
        })
        .collect();
    let mut dm = DistanceMatrix::new(rows, cols, d, features.space())?;
    dm.ridged = ridged;
    Ok(dm)
}
