//! Quadratic Wasserstein distance between the probability views of two clouds.

use alloc::vec;
use alloc::vec::Vec;

use super::measure::EmpiricalMeasure;
use crate::error::{Error, Result};
use crate::rng::{self, Domain};

/// How a distance was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum W2Method {
    /// Monotone coupling of quantile functions (exact, `n = 1`).
    Quantile,
    /// Optimal assignment between equal-size equal-weight clouds (exact).
    Assignment,
    /// Minimum-cost flow on small weighted clouds (exact).
    Transport,
    /// Average over random one-dimensional projections (a lower bound).
    Sliced { projections: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct W2Options {
    pub projections: usize,
    pub seed: u64,
    /// Weighted clouds up to this many atoms each are solved exactly.
    pub exact_atom_limit: usize,
}

impl Default for W2Options {
    fn default() -> Self {
        Self { projections: 256, seed: 0, exact_atom_limit: 12 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct W2Estimate {
    pub value: f64,
    pub method: W2Method,
}

pub fn wasserstein2(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<W2Estimate> {
    wasserstein2_with(mu, nu, &W2Options::default())
}

pub fn wasserstein2_with(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, opts: &W2Options) -> Result<W2Estimate> {
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch { expected: mu.dim(), found: nu.dim() });
    }
    let (mu, nu) = (mu.as_probability()?, nu.as_probability()?);
    let (sq, method) = if mu.dim() == 1 {
        (quantile_sq(mu.points(), mu.weights(), nu.points(), nu.weights()), W2Method::Quantile)
    } else if mu.len() == nu.len() && equal_weights(&mu) && equal_weights(&nu) {
        let cost = cost_matrix(&mu, &nu);
        let (total, _) = hungarian(&cost, mu.len());
        (total / mu.len() as f64, W2Method::Assignment)
    } else if mu.len() <= opts.exact_atom_limit && nu.len() <= opts.exact_atom_limit {
        (transport_sq(&mu, &nu), W2Method::Transport)
    } else {
        (sliced_sq(&mu, &nu, opts), W2Method::Sliced { projections: opts.projections })
    };
    Ok(W2Estimate { value: libm::sqrt(sq.max(0.0)), method })
}

fn equal_weights(mu: &EmpiricalMeasure) -> bool {
    let w0 = mu.weights()[0];
    mu.weights().iter().all(|w| (w - w0).abs() <= 1e-14 * w0.max(1.0))
}

fn cost_matrix(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Vec<f64> {
    let mut cost = Vec::with_capacity(mu.len() * nu.len());
    for (x, _) in mu.atoms() {
        for (y, _) in nu.atoms() {
            cost.push(x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum());
        }
    }
    cost
}

/// Squared distance between two weighted 1-D clouds (weights sum to one).
fn quantile_sq(xs: &[f64], wx: &[f64], ys: &[f64], wy: &[f64]) -> f64 {
    let sorted = |p: &[f64], w: &[f64]| {
        let mut v: Vec<(f64, f64)> = p.iter().copied().zip(w.iter().copied()).collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        v
    };
    let (a, b) = (sorted(xs, wx), sorted(ys, wy));
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (a[0].1, b[0].1);
    let mut total = 0.0;
    loop {
        let q = ra.min(rb);
        total += q * (a[i].0 - b[j].0) * (a[i].0 - b[j].0);
        ra -= q;
        rb -= q;
        if ra <= rb {
            i += 1;
            if i == a.len() {
                break;
            }
            ra = a[i].1;
        } else {
            j += 1;
            if j == b.len() {
                break;
            }
            rb = b[j].1;
        }
    }
    total
}

/// Minimum-cost perfect assignment on a square cost matrix.
/// Returns the total cost and the column matched to each row.
pub(crate) fn hungarian(cost: &[f64], n: usize) -> (f64, Vec<usize>) {
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
    }
    let total = (0..n).map(|i| cost[i * n + assignment[i]]).sum();
    (total, assignment)
}

/// Exact optimal transport between small weighted clouds by successive
/// shortest augmenting paths on the bipartite flow network.
fn transport_sq(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> f64 {
    let (p, q) = (mu.len(), nu.len());
    let cost = cost_matrix(mu, nu);
    let mut supply = mu.weights().to_vec();
    let mut demand = nu.weights().to_vec();
    let mut flow = vec![0.0; p * q];
    let tol = 1e-14;
    // Nodes: 0..p sources, p..p+q sinks. Forward arc i->j always open,
    // backward arc j->i open while flow[i][j] > 0.
    for _ in 0..(4 * (p + q) * (p + q) + 16) {
        if supply.iter().all(|s| *s <= tol) || demand.iter().all(|d| *d <= tol) {
            break;
        }
        let nodes = p + q;
        let mut dist = vec![f64::INFINITY; nodes];
        let mut pred = vec![usize::MAX; nodes];
        for i in 0..p {
            if supply[i] > tol {
                dist[i] = 0.0;
            }
        }
        for _ in 0..nodes {
            let mut changed = false;
            for i in 0..p {
                if dist[i].is_finite() {
                    for j in 0..q {
                        let nd = dist[i] + cost[i * q + j];
                        if nd < dist[p + j] - 1e-15 {
                            dist[p + j] = nd;
                            pred[p + j] = i;
                            changed = true;
                        }
                    }
                }
            }
            for j in 0..q {
                if dist[p + j].is_finite() {
                    for i in 0..p {
                        if flow[i * q + j] > tol {
                            let nd = dist[p + j] - cost[i * q + j];
                            if nd < dist[i] - 1e-15 {
                                dist[i] = nd;
                                pred[i] = p + j;
                                changed = true;
                            }
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let Some(end) = (0..q)
            .filter(|&j| demand[j] > tol && dist[p + j].is_finite())
            .min_by(|&a, &b| dist[p + a].total_cmp(&dist[p + b]))
        else {
            break;
        };
        // Walk back to the originating source to find the bottleneck.
        let mut path = vec![p + end];
        let mut node = p + end;
        while pred[node] != usize::MAX {
            node = pred[node];
            path.push(node);
            if path.len() > 2 * nodes + 2 {
                break;
            }
        }
        let start = node;
        let mut amount = supply[start].min(demand[end]);
        for pair in path.windows(2) {
            let (to, from) = (pair[0], pair[1]);
            if from >= p {
                amount = amount.min(flow[to * q + (from - p)]);
            }
        }
        if !(amount > tol) {
            break;
        }
        for pair in path.windows(2) {
            let (to, from) = (pair[0], pair[1]);
            if from < p {
                flow[from * q + (to - p)] += amount;
            } else {
                flow[to * q + (from - p)] -= amount;
            }
        }
        supply[start] -= amount;
        demand[end] -= amount;
    }
    flow.iter().zip(&cost).map(|(f, c)| f.max(0.0) * c).sum()
}

fn sliced_sq(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, opts: &W2Options) -> f64 {
    let n = mu.dim();
    let mut rng = rng::stream(opts.seed, Domain::Projections, 0);
    let mut dir = vec![0.0; n];
    let mut px = vec![0.0; mu.len()];
    let mut py = vec![0.0; nu.len()];
    let mut total = 0.0;
    for _ in 0..opts.projections {
        for d in dir.iter_mut() {
            *d = rng::standard_normal(&mut rng);
        }
        let norm = crate::linalg::norm(&dir);
        dir.iter_mut().for_each(|d| *d /= norm);
        for (out, (x, _)) in px.iter_mut().zip(mu.atoms()) {
            *out = crate::linalg::dot(x, &dir);
        }
        for (out, (y, _)) in py.iter_mut().zip(nu.atoms()) {
            *out = crate::linalg::dot(y, &dir);
        }
        total += quantile_sq(&px, mu.weights(), &py, nu.weights());
    }
    total / opts.projections.max(1) as f64
}
