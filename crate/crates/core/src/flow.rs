//! Integer min-cost flow by successive shortest augmenting paths.
//!
//! Initial potentials come from Bellman-Ford, so arcs may carry negative
//! costs as long as the starting residual graph has no negative cycle.
//! Later phases run Dijkstra on reduced costs.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

/// Scale applied to real distances before rounding to integer arc costs.
pub const COST_SCALE: f64 = 1e6;

/// Rounds a nonnegative distance to an integer cost.
pub fn scale_cost(d: f64) -> Result<i64> {
    let v = (d * COST_SCALE).round();
    if !(v.is_finite() && v >= 0.0 && v < 1e15) {
        return Err(Error::invalid(format!("distance {d} cannot be scaled to an integer cost")));
    }
    Ok(v as i64)
}

#[derive(Debug, Clone)]
struct Arc {
    to: usize,
    cap: i64,
    cost: i64,
    rev: usize,
}

#[derive(Debug, Clone)]
pub struct MinCostFlow {
    graph: Vec<Vec<Arc>>,
    /// (node, position) of each forward arc, by arc id.
    arcs: Vec<(usize, usize)>,
}

impl MinCostFlow {
    pub fn new(nodes: usize) -> Self {
        MinCostFlow { graph: vec![Vec::new(); nodes], arcs: Vec::new() }
    }

    pub fn nodes(&self) -> usize {
        self.graph.len()
    }

    /// Adds an arc and returns its id.
    pub fn add_arc(&mut self, from: usize, to: usize, cap: i64, cost: i64) -> usize {
        assert!(cap >= 0, "arc capacity must be nonnegative");
        let a = self.graph[from].len();
        let b = self.graph[to].len() + usize::from(from == to);
        self.graph[from].push(Arc { to, cap, cost, rev: b });
        self.graph[to].push(Arc { to: from, cap: 0, cost: -cost, rev: a });
        self.arcs.push((from, a));
        self.arcs.len() - 1
    }

    /// Flow currently carried by an arc.
    pub fn flow(&self, arc: usize) -> i64 {
        let (u, i) = self.arcs[arc];
        let e = &self.graph[u][i];
        self.graph[e.to][e.rev].cap
    }

    /// Pushes `amount` units along an arc directly, for loading an externally
    /// computed flow before an optimality check.
    pub fn push(&mut self, arc: usize, amount: i64) -> Result<()> {
        let (u, i) = self.arcs[arc];
        let (to, rev) = (self.graph[u][i].to, self.graph[u][i].rev);
        if self.graph[u][i].cap < amount || self.graph[to][rev].cap < -amount {
            return Err(Error::invalid("pushed flow exceeds arc capacity"));
        }
        self.graph[u][i].cap -= amount;
        self.graph[to][rev].cap += amount;
        Ok(())
    }

    fn bellman_ford(&self, source: usize) -> Result<Vec<Option<i64>>> {
        let n = self.nodes();
        let mut dist = vec![None; n];
        dist[source] = Some(0);
        for round in 0..n {
            let mut changed = false;
            for u in 0..n {
                let Some(du) = dist[u] else { continue };
                for e in self.graph[u].iter().filter(|e| e.cap > 0) {
                    let nd = du + e.cost;
                    if dist[e.to].map_or(true, |d| nd < d) {
                        dist[e.to] = Some(nd);
                        changed = true;
                    }
                }
            }
            if !changed {
                return Ok(dist);
            }
            if round + 1 == n {
                return Err(Error::invalid("negative cycle in flow network"));
            }
        }
        Ok(dist)
    }

    /// Sends exactly `required` units from `source` to `sink` at minimum
    /// cost and returns that cost.
    pub fn solve(&mut self, source: usize, sink: usize, required: i64) -> Result<i64> {
        let n = self.nodes();
        let mut potential: Vec<i64> = self.bellman_ford(source)?.into_iter().map(|d| d.unwrap_or(0)).collect();
        let mut sent = 0;
        let mut total = 0i64;
        let mut dist = vec![i64::MAX; n];
        let mut prev: Vec<(usize, usize)> = vec![(usize::MAX, 0); n];
        while sent < required {
            dist.fill(i64::MAX);
            dist[source] = 0;
            let mut heap = BinaryHeap::new();
            heap.push(Reverse((0i64, source)));
            while let Some(Reverse((d, u))) = heap.pop() {
                if d > dist[u] {
                    continue;
                }
                for (i, e) in self.graph[u].iter().enumerate() {
                    if e.cap == 0 {
                        continue;
                    }
                    let nd = d + e.cost + potential[u] - potential[e.to];
                    if nd < dist[e.to] {
                        dist[e.to] = nd;
                        prev[e.to] = (u, i);
                        heap.push(Reverse((nd, e.to)));
                    }
                }
            }
            if dist[sink] == i64::MAX {
                return Err(Error::Infeasible(format!("flow network carries only {sent} of {required} units")));
            }
            for v in 0..n {
                if dist[v] != i64::MAX {
                    potential[v] += dist[v];
                }
            }
            let mut push = required - sent;
            let mut v = sink;
            while v != source {
                let (u, i) = prev[v];
                push = push.min(self.graph[u][i].cap);
                v = u;
            }
            let mut v = sink;
            while v != source {
                let (u, i) = prev[v];
                let rev = self.graph[u][i].rev;
                self.graph[u][i].cap -= push;
                self.graph[v][rev].cap += push;
                total += push * self.graph[u][i].cost;
                v = u;
            }
            sent += push;
        }
        Ok(total)
    }

    /// Whether the residual graph holds a cycle of negative total cost, i.e.
    /// whether the current flow can be improved at fixed value.
    pub fn has_negative_cycle(&self) -> bool {
        let n = self.nodes();
        let mut dist = vec![0i64; n];
        for _ in 0..n {
            let mut changed = false;
            for u in 0..n {
                for e in self.graph[u].iter().filter(|e| e.cap > 0) {
                    if dist[u] + e.cost < dist[e.to] {
                        dist[e.to] = dist[u] + e.cost;
                        changed = true;
                    }
                }
            }
            if !changed {
                return false;
            }
        }
        true
    }
}
