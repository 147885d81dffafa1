//! Rosenbaum-style sensitivity analysis for matched sets with one treated
//! unit, using the permutational t statistic on set-mean-aligned outcomes
//! and its normal approximation.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::matched::Matching;

/// Upper end of the Γ search.
pub const GAMMA_CEILING: f64 = 50.0;
pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_TOL: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityResult {
    pub gamma_star: f64,
    pub alpha: f64,
    /// Probed (Γ, p-value bound) pairs, sorted by Γ.
    pub p_at_gamma: Vec<(f64, f64)>,
    pub statistic: f64,
    /// The bound exceeds alpha already at Γ = 1.
    pub not_significant: bool,
    /// Still significant at the search ceiling; read `gamma_star` as "≥ 50".
    pub at_ceiling: bool,
}

/// Aligned responses of one matched set, treated unit first.
#[derive(Debug, Clone)]
pub struct AlignedSet {
    pub q: Vec<f64>,
}

/// Aligned responses per set, oriented so the statistic is nonnegative
/// (one-sided test in the direction of the estimated effect), together with
/// the statistic.
pub fn aligned_sets(matching: &Matching, y: &[f64]) -> Result<(Vec<AlignedSet>, f64)> {
    if matching.sets.is_empty() {
        return Err(Error::invalid("empty matching"));
    }
    let mut sets = Vec::with_capacity(matching.sets.len());
    for set in &matching.sets {
        if set.treated.len() != 1 || set.controls.is_empty() {
            return Err(Error::invalid("sensitivity analysis needs sets of one treated unit and at least one control"));
        }
        let mut vals = Vec::with_capacity(set.len());
        for u in set.units() {
            vals.push(*y.get(u).ok_or_else(|| Error::Dimension(format!("unit {} has no outcome", u + 1)))?);
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        sets.push(AlignedSet { q: vals.iter().map(|v| v - mean).collect() });
    }
    let t: f64 = sets.iter().map(|s| s.q[0]).sum();
    if t < 0.0 {
        for s in &mut sets {
            s.q.iter_mut().for_each(|v| *v = -*v);
        }
    }
    Ok((sets, t.abs()))
}

/// Worst-case (mean, variance) of the treated unit's aligned response in one
/// set when treatment odds within the set may differ by up to `gamma`: weight
/// Γ goes to the `b` largest responses for the best `b ∈ 1..m−1`, maximizing
/// the mean and then the variance.
pub fn worst_case_moments(q: &[f64], gamma: f64) -> (f64, f64) {
    let m = q.len();
    let mut sorted = q.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let scale = sorted.iter().map(|v| v.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut best: Option<(f64, f64)> = None;
    for b in 1..m {
        let denom = b as f64 * gamma + (m - b) as f64;
        let (mut s1, mut s2) = (0.0, 0.0);
        for (j, v) in sorted.iter().enumerate() {
            let w = if j < b { gamma } else { 1.0 };
            s1 += w * v;
            s2 += w * v * v;
        }
        let mean = s1 / denom;
        let var = (s2 / denom - mean * mean).max(0.0);
        best = match best {
            None => Some((mean, var)),
            Some((bm, bv)) => {
                let tie = (mean - bm).abs() <= 1e-12 * scale;
                if (mean > bm && !tie) || (tie && var > bv) {
                    Some((mean, var))
                } else {
                    Some((bm, bv))
                }
            }
        };
    }
    best.unwrap_or((0.0, 0.0))
}

/// Summed worst-case moments over sets.
pub fn worst_case_totals(sets: &[AlignedSet], gamma: f64) -> (f64, f64) {
    sets.iter().map(|s| worst_case_moments(&s.q, gamma)).fold((0.0, 0.0), |(a, b), (m, v)| (a + m, b + v))
}

fn bound_from(sets: &[AlignedSet], statistic: f64, gamma: f64) -> Result<f64> {
    if !(gamma >= 1.0 && gamma.is_finite()) {
        return Err(Error::invalid(format!("gamma must be a finite value ≥ 1, got {gamma}")));
    }
    let (mu, var) = worst_case_totals(sets, gamma);
    if var <= 0.0 {
        return Err(Error::Degenerate("all responses are tied within every matched set".into()));
    }
    let z = (statistic - mu) / var.sqrt();
    Ok(Normal::standard().sf(z))
}

/// Upper bound on the one-sided p-value at sensitivity parameter `gamma`.
pub fn gamma_pvalue_bound(matching: &Matching, y: &[f64], gamma: f64) -> Result<f64> {
    let (sets, statistic) = aligned_sets(matching, y)?;
    bound_from(&sets, statistic, gamma)
}

/// Largest Γ in `[1, 50]` at which the bound stays at or below `alpha`, by
/// bisection to within `tol`.
pub fn max_gamma(matching: &Matching, y: &[f64], alpha: f64, tol: f64) -> Result<SensitivityResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let (sets, statistic) = aligned_sets(matching, y)?;
    let mut probes = Vec::new();
    let mut probe = |g: f64| -> Result<f64> {
        let p = bound_from(&sets, statistic, g)?;
        probes.push((g, p));
        Ok(p)
    };
    let mut result = SensitivityResult {
        gamma_star: 1.0,
        alpha,
        p_at_gamma: Vec::new(),
        statistic,
        not_significant: false,
        at_ceiling: false,
    };
    if probe(1.0)? > alpha {
        result.not_significant = true;
    } else if probe(GAMMA_CEILING)? <= alpha {
        result.gamma_star = GAMMA_CEILING;
        result.at_ceiling = true;
    } else {
        let (mut lo, mut hi) = (1.0, GAMMA_CEILING);
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            if probe(mid)? <= alpha {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        result.gamma_star = lo;
    }
    probes.sort_by(|a, b| a.0.total_cmp(&b.0));
    result.p_at_gamma = probes;
    Ok(result)
}
