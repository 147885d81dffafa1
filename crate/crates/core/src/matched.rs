//! Matched-set structures shared by the matchers, estimators and reports.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSpace {
    RawCovariates,
    PropensityScalar,
    Score2d,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Replacement {
    Without,
    With,
}

/// One matched set. Fixed-ratio sets have exactly one treated unit; full
/// matching may group several treated units around a single control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedSet {
    pub treated: Vec<usize>,
    pub controls: Vec<usize>,
    /// Sum of treated–control distances inside the set.
    pub set_distance: f64,
}

impl MatchedSet {
    pub fn units(&self) -> impl Iterator<Item = usize> + '_ {
        self.treated.iter().chain(self.controls.iter()).copied()
    }

    pub fn len(&self) -> usize {
        self.treated.len() + self.controls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matching {
    pub sets: Vec<MatchedSet>,
    pub space: FeatureSpace,
    pub replacement: Replacement,
    /// Fixed number of controls per set, if the matching has one.
    pub k: Option<usize>,
}

impl Matching {
    pub fn total_distance(&self) -> f64 {
        self.sets.iter().map(|s| s.set_distance).sum()
    }

    pub fn n_treated(&self) -> usize {
        self.sets.iter().map(|s| s.treated.len()).sum()
    }

    /// Number of treated–control incidences (one per treated/control pair in a set).
    pub fn n_links(&self) -> usize {
        self.sets.iter().map(|s| s.treated.len() * s.controls.len()).sum()
    }

    pub fn units(&self) -> Vec<usize> {
        self.sets.iter().flat_map(|s| s.units()).collect()
    }

    /// Checks the structural invariants against a treatment vector.
    pub fn check(&self, t: &[u8]) -> Result<()> {
        let mut seen = HashSet::new();
        for (s, set) in self.sets.iter().enumerate() {
            if set.treated.is_empty() || set.controls.is_empty() {
                return Err(Error::invalid(format!("set {} is missing an arm", s + 1)));
            }
            if set.set_distance.is_nan() || set.set_distance < 0.0 {
                return Err(Error::invalid(format!("set {} has a negative distance", s + 1)));
            }
            for &u in &set.treated {
                if t.get(u) != Some(&1) {
                    return Err(Error::invalid(format!("unit {} is listed as treated", u + 1)));
                }
            }
            for &u in &set.controls {
                if t.get(u) != Some(&0) {
                    return Err(Error::invalid(format!("unit {} is listed as control", u + 1)));
                }
            }
            let mut local = HashSet::new();
            if !set.controls.iter().all(|c| local.insert(*c)) {
                return Err(Error::invalid(format!("set {} repeats a control", s + 1)));
            }
            if let Some(k) = self.k {
                if set.controls.len() != k || set.treated.len() != 1 {
                    return Err(Error::invalid(format!("set {} is not 1:{k}", s + 1)));
                }
            }
            if self.replacement == Replacement::Without {
                for u in set.units() {
                    if !seen.insert(u) {
                        return Err(Error::invalid(format!("unit {} appears twice", u + 1)));
                    }
                }
            }
        }
        Ok(())
    }

    /// CSV with columns `set_id,role,unit_id` (both ids 1-based).
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("set_id,role,unit_id\n");
        for (s, set) in self.sets.iter().enumerate() {
            for &u in &set.treated {
                out.push_str(&format!("{},treated,{}\n", s + 1, u + 1));
            }
            for &u in &set.controls {
                out.push_str(&format!("{},control,{}\n", s + 1, u + 1));
            }
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    /// Parses the matching CSV. Set distances are not stored and read back as 0.
    pub fn from_csv_str(text: &str, space: FeatureSpace) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        let col = |name: &str| {
            headers.iter().position(|h| h == name).ok_or_else(|| Error::MissingColumn(name.into()))
        };
        let (set_col, role_col, unit_col) = (col("set_id")?, col("role")?, col("unit_id")?);
        let mut sets: BTreeMap<usize, MatchedSet> = BTreeMap::new();
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = r + 1;
            let int = |c: usize| -> Result<usize> {
                let raw = rec.get(c).unwrap_or("");
                raw.parse::<usize>().ok().filter(|&v| v >= 1).ok_or_else(|| Error::Cell {
                    row,
                    column: headers[c].clone(),
                    value: raw.to_owned(),
                })
            };
            let set_id = int(set_col)?;
            let unit = int(unit_col)? - 1;
            let entry = sets.entry(set_id).or_insert_with(|| MatchedSet {
                treated: vec![],
                controls: vec![],
                set_distance: 0.0,
            });
            match rec.get(role_col).unwrap_or("") {
                "treated" => entry.treated.push(unit),
                "control" => entry.controls.push(unit),
                other => {
                    return Err(Error::Cell { row, column: "role".into(), value: other.to_owned() })
                }
            }
        }
        let sets: Vec<MatchedSet> = sets.into_values().collect();
        let k = sets.first().map(|s| s.controls.len()).filter(|&k| {
            sets.iter().all(|s| s.treated.len() == 1 && s.controls.len() == k)
        });
        Ok(Matching { sets, space, replacement: Replacement::Without, k })
    }
}

/// Partition of unit indices into a pilot set and an analysis set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PilotSplit {
    pub pilot: Vec<usize>,
    pub analysis: Vec<usize>,
}

impl PilotSplit {
    pub fn check(&self, t: &[u8]) -> Result<()> {
        let n = t.len();
        let mut mark = vec![0u8; n];
        for &i in self.pilot.iter().chain(self.analysis.iter()) {
            if i >= n {
                return Err(Error::Dimension(format!("unit {} out of range", i + 1)));
            }
            mark[i] += 1;
        }
        if mark.iter().any(|&m| m != 1) {
            return Err(Error::invalid("pilot and analysis sets must partition the units"));
        }
        if self.pilot.iter().any(|&i| t[i] != 0) {
            return Err(Error::invalid("pilot set contains a treated unit"));
        }
        Ok(())
    }
}
