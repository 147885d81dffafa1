//! Optimal without-replacement 1:k matching, optimal full matching,
//! with-replacement nearest-neighbour matching and an exhaustive oracle.
//!
//! Real distances are scaled by [`COST_SCALE`] and rounded before solving, so
//! optimality is exact for the integer costs.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::distance::DistanceMatrix;
use crate::error::{Error, Result};
use crate::flow::{scale_cost, MinCostFlow, COST_SCALE};
use crate::matched::{MatchedSet, Matching, Replacement};

/// Largest instance `brute_force_match` accepts.
pub const BRUTE_FORCE_MAX_TREATED: usize = 6;
pub const BRUTE_FORCE_MAX_CONTROLS: usize = 12;

/// Integer cost matrix of a distance matrix.
pub fn integer_costs(dm: &DistanceMatrix) -> Result<Vec<i64>> {
    dm.d.iter().map(|&d| scale_cost(d)).collect()
}

/// Rectangular assignment (rows ≤ cols) by shortest augmenting paths with
/// potentials. `cost(r, c)` gives the cost of row `r` in column `c`.
/// Returns the column of each row together with the row and column duals.
struct Assignment {
    col_of_row: Vec<usize>,
    u: Vec<i64>,
    v: Vec<i64>,
}

fn assign(rows: usize, cols: usize, cost: impl Fn(usize, usize) -> i64) -> Assignment {
    debug_assert!(rows <= cols);
    const INF: i64 = i64::MAX / 4;
    // 1-based with a virtual column 0, following the classical formulation.
    let mut u = vec![0i64; rows + 1];
    let mut v = vec![0i64; cols + 1];
    let mut row_of_col = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    let mut minv = vec![INF; cols + 1];
    let mut used = vec![false; cols + 1];
    for i in 1..=rows {
        row_of_col[0] = i;
        let mut j0 = 0;
        minv.fill(INF);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = row_of_col[j0];
            let mut delta = INF;
            let mut j1 = 0;
            let ui0 = u[i0];
            for j in 1..=cols {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - ui0 - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=cols {
                if used[j] {
                    u[row_of_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of_col[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of_col[j0] = row_of_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of_row = vec![0; rows];
    for j in 1..=cols {
        if row_of_col[j] != 0 {
            col_of_row[row_of_col[j] - 1] = j - 1;
        }
    }
    Assignment { col_of_row, u: u[1..].to_vec(), v: v[1..].to_vec() }
}

/// Checks the linear-programming certificate of an assignment: dual
/// feasibility `u_r + v_c ≤ cost`, `v_c ≤ 0`, tightness on used cells and
/// `v_c = 0` on unused columns.
fn dual_certificate(a: &Assignment, cols: usize, cost: impl Fn(usize, usize) -> i64) -> bool {
    let mut used = vec![false; cols];
    for (r, &c) in a.col_of_row.iter().enumerate() {
        if used[c] || a.u[r] + a.v[c] != cost(r, c) {
            return false;
        }
        used[c] = true;
    }
    if a.v.iter().zip(&used).any(|(&v, &u)| v > 0 || (!u && v != 0)) {
        return false;
    }
    (0..a.col_of_row.len()).all(|r| (0..cols).all(|c| a.u[r] + a.v[c] <= cost(r, c)))
}

fn k_match_sets(dm: &DistanceMatrix, k: usize, col_of_slot: &[usize]) -> Vec<MatchedSet> {
    (0..dm.n_rows())
        .map(|i| {
            let mut cols: Vec<usize> = col_of_slot[i * k..(i + 1) * k].to_vec();
            cols.sort_unstable();
            MatchedSet {
                treated: vec![dm.rows[i]],
                controls: cols.iter().map(|&j| dm.cols[j]).collect(),
                set_distance: cols.iter().map(|&j| dm.get(i, j)).sum(),
            }
        })
        .collect()
}

fn check_k(dm: &DistanceMatrix, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if dm.n_rows() == 0 {
        return Err(Error::EmptyArm("no treated units to match".into()));
    }
    if k * dm.n_rows() > dm.n_cols() {
        return Err(Error::Infeasible(format!(
            "1:{k} matching of {} treated needs {} controls, only {} available",
            dm.n_rows(),
            k * dm.n_rows(),
            dm.n_cols()
        )));
    }
    Ok(())
}

/// Optimal 1:k matching without replacement: every treated unit receives
/// exactly `k` distinct controls, each control is used at most once, and the
/// total distance is minimal. The solution is checked against its dual
/// certificate before it is returned.
pub fn optimal_k_match(dm: &DistanceMatrix, k: usize) -> Result<Matching> {
    check_k(dm, k)?;
    let costs = integer_costs(dm)?;
    let m = dm.n_cols();
    let cost = |r: usize, c: usize| costs[(r / k) * m + c];
    let a = assign(dm.n_rows() * k, m, cost);
    if !dual_certificate(&a, m, cost) {
        return Err(Error::Degenerate("assignment failed its optimality certificate".into()));
    }
    Ok(Matching {
        sets: k_match_sets(dm, k, &a.col_of_row),
        space: dm.space,
        replacement: Replacement::Without,
        k: Some(k),
    })
}

/// Independent optimality check of a 1:k matching: loads it as a flow on
/// the transportation network and searches the residual graph for a
/// negative-cost cycle. Cost is O(V·E); meant for tests and audits.
pub fn certify_optimal(dm: &DistanceMatrix, k: usize, matching: &Matching) -> Result<bool> {
    check_k(dm, k)?;
    let costs = integer_costs(dm)?;
    let (r, c) = (dm.n_rows(), dm.n_cols());
    let (source, sink) = (0, r + c + 1);
    let mut g = MinCostFlow::new(r + c + 2);
    let row_pos: std::collections::HashMap<usize, usize> = dm.rows.iter().enumerate().map(|(i, &u)| (u, i)).collect();
    let col_pos: std::collections::HashMap<usize, usize> = dm.cols.iter().enumerate().map(|(j, &u)| (u, j)).collect();
    let supply: Vec<usize> = (0..r).map(|i| g.add_arc(source, 1 + i, k as i64, 0)).collect();
    let mut link = vec![0; r * c];
    for i in 0..r {
        for j in 0..c {
            link[i * c + j] = g.add_arc(1 + i, 1 + r + j, 1, costs[i * c + j]);
        }
    }
    let demand: Vec<usize> = (0..c).map(|j| g.add_arc(1 + r + j, sink, 1, 0)).collect();
    if matching.sets.len() != r {
        return Ok(false);
    }
    for set in &matching.sets {
        let [t] = set.treated[..] else { return Ok(false) };
        let Some(&i) = row_pos.get(&t) else { return Ok(false) };
        if set.controls.len() != k {
            return Ok(false);
        }
        g.push(supply[i], k as i64)?;
        for ctl in &set.controls {
            let Some(&j) = col_pos.get(ctl) else { return Ok(false) };
            if g.push(link[i * c + j], 1).is_err() || g.push(demand[j], 1).is_err() {
                return Ok(false);
            }
        }
    }
    Ok(!g.has_negative_cycle())
}

/// Exhaustive minimum-cost 1:k matching for tiny instances. Among optimal
/// matchings the lexicographically smallest control assignment (treated in
/// row order, controls in ascending column order) is returned.
pub fn brute_force_match(dm: &DistanceMatrix, k: usize) -> Result<Matching> {
    if dm.n_rows() > BRUTE_FORCE_MAX_TREATED || dm.n_cols() > BRUTE_FORCE_MAX_CONTROLS {
        return Err(Error::invalid(format!(
            "brute force limited to {BRUTE_FORCE_MAX_TREATED} treated and {BRUTE_FORCE_MAX_CONTROLS} controls, got {}x{}",
            dm.n_rows(),
            dm.n_cols()
        )));
    }
    check_k(dm, k)?;
    let costs = integer_costs(dm)?;

    struct Search<'a> {
        costs: &'a [i64],
        rows: usize,
        cols: usize,
        k: usize,
        used: Vec<bool>,
        current: Vec<usize>,
        best: Option<(i64, Vec<usize>)>,
    }

    impl Search<'_> {
        fn row(&mut self, i: usize, partial: i64) {
            let beaten = self.best.as_ref().is_some_and(|(b, _)| partial >= *b);
            if i == self.rows {
                if !beaten {
                    self.best = Some((partial, self.current.clone()));
                }
                return;
            }
            // Costs are nonnegative, so a partial total already at the best
            // cannot win; ties keep the earlier, lexicographically smaller one.
            if beaten {
                return;
            }
            self.pick(i, 0, 0, partial);
        }

        fn pick(&mut self, i: usize, from: usize, taken: usize, partial: i64) {
            if taken == self.k {
                self.row(i + 1, partial);
                return;
            }
            for j in from..self.cols {
                if self.used[j] {
                    continue;
                }
                self.used[j] = true;
                self.current.push(j);
                self.pick(i, j + 1, taken + 1, partial + self.costs[i * self.cols + j]);
                self.current.pop();
                self.used[j] = false;
            }
        }
    }

    let mut s = Search {
        costs: &costs,
        rows: dm.n_rows(),
        cols: dm.n_cols(),
        k,
        used: vec![false; dm.n_cols()],
        current: Vec::new(),
        best: None,
    };
    s.row(0, 0);
    let (_, slots) = s.best.expect("feasible instance has a matching");
    Ok(Matching {
        sets: k_match_sets(dm, k, &slots),
        space: dm.space,
        replacement: Replacement::Without,
        k: Some(k),
    })
}

/// Units that anchor sets ("hubs") and units spread over them ("leaves"),
/// with per-hub bounds on the number of leaves.
struct FullPlan {
    treated_hubs: bool,
    lo: usize,
    hi: usize,
}

fn full_plan(dm: &DistanceMatrix, min_ratio: f64, max_ratio: f64) -> Result<FullPlan> {
    let (n_t, n_c) = (dm.n_rows(), dm.n_cols());
    if n_t == 0 || n_c == 0 {
        return Err(Error::EmptyArm("full matching needs treated and control units".into()));
    }
    if !(min_ratio > 0.0 && min_ratio <= max_ratio) || min_ratio.is_nan() || max_ratio.is_nan() {
        return Err(Error::invalid(format!("ratio bounds [{min_ratio}, {max_ratio}] need 0 < min ≤ max")));
    }
    let bound = |v: f64, n_leaves: usize| -> usize {
        if v.is_infinite() || v >= n_leaves as f64 {
            n_leaves
        } else {
            v.max(0.0) as usize
        }
    };
    let plan = if n_c >= n_t {
        FullPlan {
            treated_hubs: true,
            lo: (min_ratio.ceil() as usize).max(1),
            hi: bound(max_ratio.floor(), n_c),
        }
    } else {
        FullPlan {
            treated_hubs: false,
            lo: ((1.0 / max_ratio).ceil() as usize).max(1),
            hi: bound((1.0 / min_ratio + 1e-12).floor(), n_t),
        }
    };
    let (n_h, n_l) = if plan.treated_hubs { (n_t, n_c) } else { (n_c, n_t) };
    if plan.lo > plan.hi || n_h * plan.lo > n_l || n_l > n_h * plan.hi {
        return Err(Error::Infeasible(format!(
            "full matching of {n_t} treated and {n_c} controls cannot keep every set within ratio bounds [{min_ratio}, {max_ratio}]"
        )));
    }
    Ok(plan)
}

fn full_sets(dm: &DistanceMatrix, plan: &FullPlan, hub_of_leaf: &[usize]) -> Matching {
    let n_h = if plan.treated_hubs { dm.n_rows() } else { dm.n_cols() };
    let mut leaves: Vec<Vec<usize>> = vec![Vec::new(); n_h];
    for (l, &h) in hub_of_leaf.iter().enumerate() {
        leaves[h].push(l);
    }
    let sets = leaves
        .into_iter()
        .enumerate()
        .map(|(h, ls)| {
            let (treated, controls, set_distance) = if plan.treated_hubs {
                (vec![dm.rows[h]], ls.iter().map(|&l| dm.cols[l]).collect(), ls.iter().map(|&l| dm.get(h, l)).sum())
            } else {
                (ls.iter().map(|&l| dm.rows[l]).collect(), vec![dm.cols[h]], ls.iter().map(|&l| dm.get(l, h)).sum())
            };
            MatchedSet { treated, controls, set_distance }
        })
        .collect();
    Matching { sets, space: dm.space, replacement: Replacement::Without, k: None }
}

fn hub_leaf_costs(dm: &DistanceMatrix, plan: &FullPlan) -> Result<(usize, usize, Vec<i64>)> {
    let costs = integer_costs(dm)?;
    if plan.treated_hubs {
        Ok((dm.n_rows(), dm.n_cols(), costs))
    } else {
        let (r, c) = (dm.n_rows(), dm.n_cols());
        let mut t = vec![0; r * c];
        for i in 0..r {
            for j in 0..c {
                t[j * r + i] = costs[i * c + j];
            }
        }
        Ok((c, r, t))
    }
}

/// Optimal full matching: every unit lands in exactly one set with at least
/// one treated and one control, each set's control:treated ratio lies in
/// `[min_ratio, max_ratio]`, and total within-set treated–control distance
/// is minimal. When controls are at least as many as treated, sets hold one
/// treated unit; otherwise they hold one control.
pub fn full_match(dm: &DistanceMatrix, min_ratio: f64, max_ratio: f64) -> Result<Matching> {
    let plan = full_plan(dm, min_ratio, max_ratio)?;
    let (n_h, n_l, cost) = hub_leaf_costs(dm, &plan)?;

    // Each leaf's cost splits into its nearest-hub cost plus a nonnegative
    // excess; fill the mandatory `lo` slots per hub at minimum total excess
    // and send every other leaf to its nearest hub.
    let nearest: Vec<usize> = (0..n_l)
        .map(|l| (0..n_h).min_by_key(|&h| (cost[h * n_l + l], h)).expect("hubs nonempty"))
        .collect();
    let excess = |slot: usize, l: usize| {
        let h = slot / plan.lo;
        cost[h * n_l + l] - cost[nearest[l] * n_l + l]
    };
    let a = assign(n_h * plan.lo, n_l, excess);
    let mut hub_of_leaf = nearest.clone();
    let mut counts = vec![0usize; n_h];
    for (slot, &l) in a.col_of_row.iter().enumerate() {
        hub_of_leaf[l] = slot / plan.lo;
    }
    for &h in &hub_of_leaf {
        counts[h] += 1;
    }
    if counts.iter().any(|&c| c > plan.hi) {
        return full_match_flow(dm, min_ratio, max_ratio);
    }
    Ok(full_sets(dm, &plan, &hub_of_leaf))
}

/// Full matching solved directly as a min-cost flow (leaves → hubs → sink
/// with a heavily rewarded lower-bound arc per hub). Same optimum as
/// [`full_match`]; used when upper bounds bind and as a cross-check.
pub fn full_match_flow(dm: &DistanceMatrix, min_ratio: f64, max_ratio: f64) -> Result<Matching> {
    let plan = full_plan(dm, min_ratio, max_ratio)?;
    let (n_h, n_l, cost) = hub_leaf_costs(dm, &plan)?;
    let max_cost = cost.iter().copied().max().unwrap_or(0);
    let big = (max_cost + 1)
        .checked_mul(n_l as i64 + 1)
        .ok_or_else(|| Error::invalid("distances too large for the flow solver"))?;
    let (source, sink) = (0, n_l + n_h + 1);
    let mut g = MinCostFlow::new(n_l + n_h + 2);
    for l in 0..n_l {
        g.add_arc(source, 1 + l, 1, 0);
    }
    let mut links = vec![0; n_h * n_l];
    for l in 0..n_l {
        for h in 0..n_h {
            links[h * n_l + l] = g.add_arc(1 + l, 1 + n_l + h, 1, cost[h * n_l + l]);
        }
    }
    for h in 0..n_h {
        g.add_arc(1 + n_l + h, sink, plan.lo as i64, -big);
        if plan.hi > plan.lo {
            g.add_arc(1 + n_l + h, sink, (plan.hi - plan.lo) as i64, 0);
        }
    }
    g.solve(source, sink, n_l as i64)?;
    let hub_of_leaf: Vec<usize> = (0..n_l)
        .map(|l| (0..n_h).find(|&h| g.flow(links[h * n_l + l]) == 1).expect("every leaf carries flow"))
        .collect();
    let mut counts = vec![0usize; n_h];
    for &h in &hub_of_leaf {
        counts[h] += 1;
    }
    if counts.iter().any(|&c| c < plan.lo) {
        return Err(Error::Infeasible("full matching lower bounds cannot be met".into()));
    }
    Ok(full_sets(dm, &plan, &hub_of_leaf))
}

/// With-replacement matching: for every unit, the `m` units of the opposite
/// arm closest in Mahalanobis distance under `inv_cov` (ties to the lower
/// index). Returned lists are ordered by distance.
pub fn nn_with_replacement(z: &DMatrix<f64>, t: &[u8], m: usize, inv_cov: &DMatrix<f64>) -> Result<Vec<Vec<usize>>> {
    let (n, q) = z.shape();
    if t.len() != n {
        return Err(Error::Dimension(format!("{} treatment values for {n} units", t.len())));
    }
    if inv_cov.shape() != (q, q) {
        return Err(Error::Dimension(format!("inverse covariance is {:?}, features have {q} columns", inv_cov.shape())));
    }
    if m == 0 {
        return Err(Error::invalid("M must be at least 1"));
    }
    let treated: Vec<usize> = (0..n).filter(|&i| t[i] == 1).collect();
    let controls: Vec<usize> = (0..n).filter(|&i| t[i] == 0).collect();
    if treated.len() < m || controls.len() < m {
        return Err(Error::Infeasible(format!(
            "M={m} matches need at least {m} units per arm ({} treated, {} controls)",
            treated.len(),
            controls.len()
        )));
    }
    let sym = (inv_cov + inv_cov.transpose()) * 0.5;
    let l = sym
        .cholesky()
        .ok_or_else(|| Error::Degenerate("inverse covariance is not positive definite".into()))?
        .l();
    let w = z * l;
    let rows: Vec<Vec<f64>> = (0..n).map(|i| w.row(i).iter().copied().collect()).collect();
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    Ok((0..n)
        .into_par_iter()
        .map(|i| {
            let pool = if t[i] == 1 { &controls } else { &treated };
            let mut cand: Vec<(f64, usize)> = pool.iter().map(|&j| (sq(&rows[i], &rows[j]), j)).collect();
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if cand.len() > m {
                cand.select_nth_unstable_by(m - 1, cmp);
                cand.truncate(m);
            }
            cand.sort_by(cmp);
            cand.into_iter().map(|(_, j)| j).collect()
        })
        .collect())
}

/// Total integer cost of a matching under the solver's cost scaling.
pub fn scaled_total(matching: &Matching) -> i64 {
    (matching.total_distance() * COST_SCALE).round() as i64
}
