//! Observational datasets and their CSV persistence.
//!
//! Unit indices are 0-based in memory and 1-based in every file or report.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Simulation ground truth for each unit.
///
/// `psi` already contains any unmeasured-confounder contribution, so
/// `y = tau_i * t + psi + epsilon` holds exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthRecord {
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    pub tau_i: Vec<f64>,
    pub epsilon: Vec<f64>,
    pub u: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Covariates, one row per unit.
    pub x: DMatrix<f64>,
    /// Treatment assignment, 1 = treated.
    pub t: Vec<u8>,
    pub y: Vec<f64>,
    pub truth: Option<TruthRecord>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, t: Vec<u8>, y: Vec<f64>, truth: Option<TruthRecord>) -> Result<Self> {
        let ds = Dataset { x, t, y, truth };
        ds.validate()?;
        Ok(ds)
    }

    /// Checks every dataset invariant and reports the first violation.
    pub fn validate(&self) -> Result<()> {
        let n = self.x.nrows();
        if self.t.len() != n || self.y.len() != n {
            return Err(Error::Dimension(format!(
                "X has {} rows, T has {}, Y has {}",
                n,
                self.t.len(),
                self.y.len()
            )));
        }
        if let Some((unit, &v)) = self.t.iter().enumerate().find(|(_, &v)| v > 1) {
            return Err(Error::NonBinaryTreatment { unit: unit + 1, value: v as f64 });
        }
        for i in 0..n {
            if self.x.row(i).iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { field: "X".into(), unit: i + 1 });
            }
            if !self.y[i].is_finite() {
                return Err(Error::NonFinite { field: "Y".into(), unit: i + 1 });
            }
        }
        let n_t = self.n_treated();
        if n_t == 0 {
            return Err(Error::EmptyArm("no treated units".into()));
        }
        if n_t == n {
            return Err(Error::EmptyArm("no control units".into()));
        }
        if let Some(truth) = &self.truth {
            let lens = [truth.phi.len(), truth.psi.len(), truth.tau_i.len(), truth.epsilon.len()];
            if lens.iter().any(|&l| l != n) || truth.u.as_ref().is_some_and(|u| u.len() != n) {
                return Err(Error::Dimension("truth record length differs from n".into()));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_treated(&self) -> usize {
        self.t.iter().filter(|&&v| v == 1).count()
    }

    pub fn treated_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.t[i] == 1).collect()
    }

    pub fn control_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.t[i] == 0).collect()
    }

    /// Covariate matrix restricted to the given columns, or a copy of X.
    pub fn columns(&self, cols: Option<&[usize]>) -> Result<DMatrix<f64>> {
        match cols {
            None => Ok(self.x.clone()),
            Some(cols) => {
                if let Some(&bad) = cols.iter().find(|&&c| c >= self.p()) {
                    return Err(Error::Dimension(format!("column {} out of range (p = {})", bad + 1, self.p())));
                }
                Ok(self.x.select_columns(cols))
            }
        }
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut text = String::new();
        File::open(path)?.read_to_string(&mut text)?;
        Self::from_csv_str(&text)
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        let find = |name: &str| headers.iter().position(|h| h == name);

        let mut x_cols = Vec::new();
        while let Some(pos) = find(&format!("x{}", x_cols.len() + 1)) {
            x_cols.push(pos);
        }
        if x_cols.is_empty() {
            return Err(Error::MissingColumn("x1".into()));
        }
        let t_col = find("t").ok_or_else(|| Error::MissingColumn("t".into()))?;
        let y_col = find("y").ok_or_else(|| Error::MissingColumn("y".into()))?;
        let truth_cols: Vec<Option<usize>> =
            ["phi", "psi", "tau_i", "epsilon", "u"].iter().map(|c| find(c)).collect();
        let has_truth = truth_cols[..4].iter().all(Option::is_some);

        let p = x_cols.len();
        let mut xs = Vec::new();
        let mut t = Vec::new();
        let mut y = Vec::new();
        let mut truth_vals: [Vec<f64>; 5] = Default::default();

        for (r, record) in rdr.records().enumerate() {
            let record = record?;
            let row = r + 1;
            let cell = |col: usize| -> Result<f64> {
                let raw = record.get(col).unwrap_or("");
                match raw.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(v),
                    _ => Err(Error::Cell { row, column: headers[col].clone(), value: raw.to_owned() }),
                }
            };
            for &c in &x_cols {
                xs.push(cell(c)?);
            }
            let tv = cell(t_col)?;
            if tv != 0.0 && tv != 1.0 {
                return Err(Error::NonBinaryTreatment { unit: row, value: tv });
            }
            t.push(tv as u8);
            y.push(cell(y_col)?);
            if has_truth {
                for (k, col) in truth_cols.iter().enumerate() {
                    if let Some(c) = col {
                        truth_vals[k].push(cell(*c)?);
                    }
                }
            }
        }

        let n = t.len();
        let x = DMatrix::from_row_slice(n, p, &xs);
        let truth = if has_truth {
            let [phi, psi, tau_i, epsilon, u] = truth_vals;
            Some(TruthRecord { phi, psi, tau_i, epsilon, u: truth_cols[4].map(|_| u) })
        } else {
            None
        };
        Dataset::new(x, t, y, truth)
    }

    pub fn to_csv_string(&self) -> String {
        let p = self.p();
        let mut header: Vec<String> = (1..=p).map(|j| format!("x{j}")).collect();
        header.push("t".into());
        header.push("y".into());
        if let Some(truth) = &self.truth {
            header.extend(["phi", "psi", "tau_i", "epsilon"].map(String::from));
            if truth.u.is_some() {
                header.push("u".into());
            }
        }
        let mut out = header.join(",");
        out.push('\n');
        for i in 0..self.n() {
            let mut fields: Vec<String> = self.x.row(i).iter().map(|v| fmt_f64(*v)).collect();
            fields.push(self.t[i].to_string());
            fields.push(fmt_f64(self.y[i]));
            if let Some(truth) = &self.truth {
                for v in [truth.phi[i], truth.psi[i], truth.tau_i[i], truth.epsilon[i]] {
                    fields.push(fmt_f64(v));
                }
                if let Some(u) = &truth.u {
                    fields.push(fmt_f64(u[i]));
                }
            }
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.validate()?;
        let mut f = File::create(path)?;
        f.write_all(self.to_csv_string().as_bytes())?;
        Ok(())
    }
}

/// Shortest decimal form that parses back to the same bits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}
