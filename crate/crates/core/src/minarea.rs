//! Minimum-area selection of the bootstrap draws a band must cover.
//!
//! Given `B` draws `d_i(c_j)` on a grid with column weights `w_j`, choose at
//! most `L` draws to leave uncovered so that
//! `sum_j w_j * max(0, max_{i covered} d_i(c_j))` is as small as possible.
//! The problem is solved exactly by depth-first branch and bound, seeded with
//! a greedy solution.

use serde::{Deserialize, Serialize};

/// Output of [`solve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinAreaSolution {
    /// Indices of draws left uncovered, ascending.
    pub uncovered: Vec<usize>,
    /// `max(0, max over covered draws)` per column.
    pub envelope: Vec<f64>,
    /// Weighted envelope area.
    pub area: f64,
    /// False when the node budget ran out before optimality was proven.
    pub optimal: bool,
    /// Branch-and-bound nodes visited.
    pub nodes: usize,
}

/// Default node budget for the branch and bound.
pub const DEFAULT_NODE_LIMIT: usize = 2_000_000;

/// Number of draws that may stay uncovered at level `alpha`.
pub fn uncovered_allowance(b: usize, alpha: f64) -> usize {
    ((alpha * b as f64) + 1e-9).floor() as usize
}

/// Envelope of all draws not flagged in `removed`.
pub fn envelope(draws: &[Vec<f64>], removed: &[bool]) -> Vec<f64> {
    let j = draws.first().map_or(0, |d| d.len());
    let mut env = vec![0.0f64; j];
    for (d, &r) in draws.iter().zip(removed) {
        if !r {
            for (e, &v) in env.iter_mut().zip(d) {
                *e = e.max(v);
            }
        }
    }
    env
}

fn weighted(env: &[f64], w: &[f64]) -> f64 {
    env.iter().zip(w).map(|(a, b)| a * b).sum()
}

/// Greedy heuristic: repeatedly drop the draw whose removal shrinks the
/// envelope area the most.
pub fn greedy(draws: &[Vec<f64>], weights: &[f64], allowance: usize) -> Vec<usize> {
    let b = draws.len();
    let mut removed = vec![false; b];
    let mut out = Vec::new();
    for _ in 0..allowance.min(b) {
        let base = weighted(&envelope(draws, &removed), weights);
        let mut best: Option<(usize, f64)> = None;
        for i in 0..b {
            if removed[i] {
                continue;
            }
            removed[i] = true;
            let a = weighted(&envelope(draws, &removed), weights);
            removed[i] = false;
            if best.is_none_or(|(_, v)| a < v) {
                best = Some((i, a));
            }
        }
        match best {
            Some((i, a)) if a < base => {
                removed[i] = true;
                out.push(i);
            }
            _ => break,
        }
    }
    out.sort_unstable();
    out
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum State {
    Open,
    Kept,
    Removed,
}

struct Search<'a> {
    draws: &'a [Vec<f64>],
    weights: &'a [f64],
    /// Per column, draw indices sorted by decreasing value.
    order: Vec<Vec<usize>>,
    state: Vec<State>,
    best_area: f64,
    best_removed: Vec<usize>,
    removed: Vec<usize>,
    nodes: usize,
    limit: usize,
    exhausted: bool,
}

impl Search<'_> {
    /// Lower bound on the area of any completion with `r` removals left,
    /// plus the open draw to branch on (None means the node is a leaf whose
    /// value equals the bound).
    fn bound(&self, r: usize) -> (f64, Option<usize>) {
        let mut lb = 0.0;
        let mut top_area = 0.0;
        let mut branch: Option<(usize, f64)> = None;
        for (j, ord) in self.order.iter().enumerate() {
            let w = self.weights[j];
            if w <= 0.0 {
                continue;
            }
            let mut open_seen = 0usize;
            let mut col_lb = 0.0f64;
            let mut top: Option<usize> = None;
            for &i in ord {
                let v = self.draws[i][j];
                if v <= 0.0 {
                    break;
                }
                match self.state[i] {
                    State::Removed => continue,
                    State::Kept => {
                        if top.is_none() {
                            top = Some(i);
                        }
                        col_lb = v;
                        break;
                    }
                    State::Open => {
                        if top.is_none() {
                            top = Some(i);
                        }
                        if open_seen == r {
                            col_lb = v;
                            break;
                        }
                        open_seen += 1;
                    }
                }
            }
            lb += w * col_lb;
            if let Some(i) = top {
                let v = self.draws[i][j];
                top_area += w * v;
                if self.state[i] == State::Open {
                    let gain = w * (v - col_lb);
                    if branch.is_none_or(|(_, g)| gain > g) {
                        branch = Some((i, gain));
                    }
                }
            }
        }
        if r == 0 || branch.is_none() {
            // nothing left to remove, or no open draw attains a column top
            return (top_area, None);
        }
        (lb, branch.map(|(i, _)| i))
    }

    fn dfs(&mut self, r: usize) {
        self.nodes += 1;
        if self.nodes > self.limit {
            self.exhausted = true;
            return;
        }
        let (lb, branch) = self.bound(r);
        if lb >= self.best_area - 1e-15 * self.best_area.abs().max(1.0) && branch.is_some() {
            return;
        }
        match branch {
            None => {
                if lb < self.best_area {
                    self.best_area = lb;
                    self.best_removed = self.removed.clone();
                }
            }
            Some(i) => {
                self.state[i] = State::Removed;
                self.removed.push(i);
                self.dfs(r - 1);
                self.removed.pop();
                if self.exhausted {
                    self.state[i] = State::Open;
                    return;
                }
                self.state[i] = State::Kept;
                self.dfs(r);
                self.state[i] = State::Open;
            }
        }
    }
}

/// Exact minimum-area choice of at most `allowance` uncovered draws.
///
/// `seeds` are extra candidate uncovered sets (e.g. from a constant band)
/// used as starting upper bounds.
pub fn solve(
    draws: &[Vec<f64>],
    weights: &[f64],
    allowance: usize,
    seeds: &[Vec<usize>],
    node_limit: usize,
) -> MinAreaSolution {
    let b = draws.len();
    let ncol = weights.len();
    let eval = |set: &[usize]| {
        let mut removed = vec![false; b];
        for &i in set {
            removed[i] = true;
        }
        weighted(&envelope(draws, &removed), weights)
    };
    let mut best = greedy(draws, weights, allowance);
    let mut best_area = eval(&best);
    for s in seeds {
        if s.len() <= allowance {
            let a = eval(s);
            if a < best_area {
                best_area = a;
                best = s.clone();
            }
        }
    }
    let order = (0..ncol)
        .map(|j| {
            let mut o: Vec<usize> = (0..b).collect();
            o.sort_by(|&x, &y| draws[y][j].total_cmp(&draws[x][j]).then(x.cmp(&y)));
            o
        })
        .collect();
    let mut s = Search {
        draws,
        weights,
        order,
        state: vec![State::Open; b],
        best_area,
        best_removed: best,
        removed: Vec::new(),
        nodes: 0,
        limit: node_limit,
        exhausted: false,
    };
    s.dfs(allowance.min(b));
    let mut uncovered = s.best_removed;
    uncovered.sort_unstable();
    let mut removed = vec![false; b];
    for &i in &uncovered {
        removed[i] = true;
    }
    let env = envelope(draws, &removed);
    MinAreaSolution {
        area: weighted(&env, weights),
        envelope: env,
        uncovered,
        optimal: !s.exhausted,
        nodes: s.nodes,
    }
}

/// Smallest area over every subset of at most `allowance` uncovered draws.
/// Exponential; for testing.
pub fn exhaustive(draws: &[Vec<f64>], weights: &[f64], allowance: usize) -> f64 {
    let b = draws.len();
    assert!(b <= 20, "exhaustive search is exponential");
    let mut best = f64::INFINITY;
    for mask in 0u32..(1u32 << b) {
        if mask.count_ones() as usize > allowance {
            continue;
        }
        let removed: Vec<bool> = (0..b).map(|i| mask >> i & 1 == 1).collect();
        best = best.min(weighted(&envelope(draws, &removed), weights));
    }
    best
}
