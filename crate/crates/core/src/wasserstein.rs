//! Exact Wasserstein distances between finite-support measures.
//!
//! The transport problem is solved by the transportation simplex: a basis is
//! a spanning tree of the bipartite source/target graph, potentials come from
//! the tree, and the entering cell is picked by block search over reduced
//! costs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::measure::{check_weights, WeightedPathMeasure};
use crate::roughpath::{lift_piecewise_linear, rho_alpha};
use crate::wavelet::{euclid, SampledPath};

pub const DEFAULT_SUPPORT_CAP: usize = 4096;

/// Source and target weights with a cost matrix (`cost[i * b + j]`).
#[derive(Debug, Clone, PartialEq)]
pub struct TransportProblem {
    source: Vec<f64>,
    target: Vec<f64>,
    cost: Vec<f64>,
}

impl TransportProblem {
    pub fn new(source: Vec<f64>, target: Vec<f64>, cost: Vec<f64>) -> Result<Self> {
        check_weights(&source)?;
        check_weights(&target)?;
        if cost.len() != source.len() * target.len() {
            return Err(Error::DimensionMismatch { expected: source.len() * target.len(), got: cost.len() });
        }
        if cost.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::Infeasible("costs must be finite and non-negative".into()));
        }
        Ok(TransportProblem { source, target, cost })
    }

    /// Costs `d(x_i, y_j)^r` from ground distances.
    pub fn from_distances(source: Vec<f64>, target: Vec<f64>, dist: &[f64], r: f64) -> Result<Self> {
        if r < 1.0 {
            return domain("order r must be at least 1");
        }
        TransportProblem::new(source, target, dist.iter().map(|d| d.powf(r)).collect())
    }

    pub fn source(&self) -> &[f64] {
        &self.source
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn cost(&self, i: usize, j: usize) -> f64 {
        self.cost[i * self.target.len() + j]
    }
}

/// Optimal plan in sparse form `(i, j, mass)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl Coupling {
    pub fn source_marginal(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.rows];
        for &(i, _, w) in &self.entries {
            m[i] += w;
        }
        m
    }

    pub fn target_marginal(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.cols];
        for &(_, j, w) in &self.entries {
            m[j] += w;
        }
        m
    }
}

/// Value `(optimal cost)^(1/r)`, the optimal cost and an optimal coupling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transport {
    pub value: f64,
    pub cost: f64,
    pub coupling: Coupling,
}

struct Basis {
    m: usize,
    n: usize,
    /// Basic cells `(i, j)` with their flows; always `m + n - 1` of them.
    cells: Vec<(usize, usize)>,
    flow: Vec<f64>,
}

impl Basis {
    /// North-west corner rule; degenerate steps keep zero-flow cells so the
    /// basis stays a spanning tree.
    fn northwest(a: &[f64], b: &[f64]) -> Basis {
        let (m, n) = (a.len(), b.len());
        let (mut ra, mut rb) = (a[0], b[0]);
        let (mut i, mut j) = (0, 0);
        let mut cells = Vec::with_capacity(m + n - 1);
        let mut flow = Vec::with_capacity(m + n - 1);
        loop {
            let f = ra.min(rb).max(0.0);
            cells.push((i, j));
            flow.push(f);
            if i == m - 1 && j == n - 1 {
                break;
            }
            if (ra <= rb && i < m - 1) || j == n - 1 {
                rb -= f;
                i += 1;
                ra = a[i];
            } else {
                ra -= f;
                j += 1;
                rb = b[j];
            }
        }
        Basis { m, n, cells, flow }
    }

    /// Tree rooted at row 0: parent node, parent edge and depth; nodes are
    /// rows `0..m` then columns `m..m+n`.
    fn tree(&self) -> (Vec<usize>, Vec<usize>, Vec<usize>, Vec<usize>) {
        let nodes = self.m + self.n;
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nodes];
        for (e, &(i, j)) in self.cells.iter().enumerate() {
            adj[i].push(e);
            adj[self.m + j].push(e);
        }
        let mut parent = vec![usize::MAX; nodes];
        let mut pedge = vec![usize::MAX; nodes];
        let mut depth = vec![0; nodes];
        let mut order = Vec::with_capacity(nodes);
        parent[0] = 0;
        order.push(0);
        let mut k = 0;
        while k < order.len() {
            let u = order[k];
            k += 1;
            for &e in &adj[u] {
                let (i, j) = self.cells[e];
                let v = if u == i { self.m + j } else { i };
                if parent[v] == usize::MAX {
                    parent[v] = u;
                    pedge[v] = e;
                    depth[v] = depth[u] + 1;
                    order.push(v);
                }
            }
        }
        (parent, pedge, depth, order)
    }
}

/// Sparse transport plan as `(i, j, mass)` triples.
type Plan = Vec<(usize, usize, f64)>;

fn solve(a: &[f64], b: &[f64], cost: impl Fn(usize, usize) -> f64) -> Result<(f64, Plan)> {
    let (m, n) = (a.len(), b.len());
    let mut basis = Basis::northwest(a, b);
    let scale = (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| cost(i, j)).fold(0.0, f64::max);
    let eps = 1e-12 * scale.max(1e-300);
    let block = ((m * n) as f64).sqrt().ceil() as usize;
    let max_iters = 100 * (m + n) * (m + n).max(10);
    let mut cursor = 0;
    for _ in 0..max_iters {
        let (parent, pedge, depth, order) = basis.tree();
        if order.len() != m + n {
            return Err(Error::Infeasible("transport basis lost connectivity".into()));
        }
        let mut u = vec![0.0; m];
        let mut v = vec![0.0; n];
        for &node in &order[1..] {
            let (i, j) = basis.cells[pedge[node]];
            if node >= m {
                v[j] = cost(i, j) - u[i];
            } else {
                u[i] = cost(i, j) - v[j];
            }
        }
        // Block search for a cell with negative reduced cost.
        let total = m * n;
        let mut best: Option<(usize, usize, f64)> = None;
        let mut scanned = 0;
        while scanned < total {
            let end = (scanned + block).min(total);
            for k in scanned..end {
                let idx = (cursor + k) % total;
                let (i, j) = (idx / n, idx % n);
                let rc = cost(i, j) - u[i] - v[j];
                if rc < -eps && best.is_none_or(|(_, _, r)| rc < r) {
                    best = Some((i, j, rc));
                }
            }
            scanned = end;
            if best.is_some() {
                break;
            }
        }
        let Some((ei, ej, _)) = best else {
            let value = basis.cells.iter().zip(&basis.flow).map(|(&(i, j), f)| f * cost(i, j)).sum();
            let plan = basis.cells.iter().zip(&basis.flow).filter(|(_, f)| **f > 0.0).map(|(&(i, j), &f)| (i, j, f)).collect();
            return Ok((value, plan));
        };
        cursor = (cursor + scanned) % total;
        // Tree path between row ei and column ej.
        let (mut x, mut y) = (ei, m + ej);
        let (mut from_row, mut from_col) = (Vec::new(), Vec::new());
        while depth[x] > depth[y] {
            from_row.push(pedge[x]);
            x = parent[x];
        }
        while depth[y] > depth[x] {
            from_col.push(pedge[y]);
            y = parent[y];
        }
        while x != y {
            from_row.push(pedge[x]);
            x = parent[x];
            from_col.push(pedge[y]);
            y = parent[y];
        }
        // Cycle: entering cell (+), then from column ej to row ei alternating -,+,...
        let path: Vec<usize> = from_col.into_iter().chain(from_row.into_iter().rev()).collect();
        let mut theta = f64::INFINITY;
        let mut leave = usize::MAX;
        for (k, &e) in path.iter().enumerate() {
            if k % 2 == 0 && basis.flow[e] < theta {
                theta = basis.flow[e];
                leave = e;
            }
        }
        for (k, &e) in path.iter().enumerate() {
            if k % 2 == 0 {
                basis.flow[e] = (basis.flow[e] - theta).max(0.0);
            } else {
                basis.flow[e] += theta;
            }
        }
        basis.cells[leave] = (ei, ej);
        basis.flow[leave] = theta;
    }
    Err(Error::Infeasible("transportation simplex did not converge".into()))
}

fn positive(w: &[f64]) -> Vec<usize> {
    (0..w.len()).filter(|&i| w[i] > 0.0).collect()
}

/// Exact optimal transport with support sizes capped at `cap`.
pub fn wasserstein_capped(p: &TransportProblem, r: f64, cap: usize) -> Result<Transport> {
    if r < 1.0 {
        return domain("order r must be at least 1");
    }
    let (rows, cols) = (positive(&p.source), positive(&p.target));
    for len in [rows.len(), cols.len()] {
        if len > cap {
            return Err(Error::TooLarge { size: len, cap });
        }
    }
    let a: Vec<f64> = rows.iter().map(|&i| p.source[i]).collect();
    let b: Vec<f64> = cols.iter().map(|&j| p.target[j]).collect();
    let (cost, plan) = solve(&a, &b, |i, j| p.cost(rows[i], cols[j]))?;
    let entries = plan.into_iter().map(|(i, j, w)| (rows[i], cols[j], w)).collect();
    Ok(Transport {
        value: cost.max(0.0).powf(1.0 / r),
        cost,
        coupling: Coupling { rows: p.source.len(), cols: p.target.len(), entries },
    })
}

/// Exact `W_r` for a problem whose costs are already `d^r`.
pub fn wasserstein(p: &TransportProblem, r: f64) -> Result<Transport> {
    wasserstein_capped(p, r, DEFAULT_SUPPORT_CAP)
}

/// Ground metric on sampled paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PathMetric {
    /// `|x_0 - y_0|` plus the grid Hölder quotient of `x - y`.
    Holder,
    /// Inhomogeneous Hölder metric of the piecewise-linear lifts.
    RhoAlpha,
    /// `sup_t |x_t - y_t|` over the grid.
    Uniform,
}

impl std::str::FromStr for PathMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "holder" => Ok(PathMetric::Holder),
            "rho-alpha" => Ok(PathMetric::RhoAlpha),
            "uniform" => Ok(PathMetric::Uniform),
            other => Err(Error::Domain(format!("unknown path metric {other:?}"))),
        }
    }
}

/// Distance between two paths on a common grid.
pub fn ground_distance(x: &SampledPath, y: &SampledPath, alpha: f64, metric: PathMetric) -> Result<f64> {
    match metric {
        PathMetric::RhoAlpha => rho_alpha(&lift_piecewise_linear(x)?, &lift_piecewise_linear(y)?, alpha),
        PathMetric::Holder => {
            let diff = x.sub(y)?;
            Ok(euclid(diff.start()) + diff.holder_quotient(alpha))
        }
        PathMetric::Uniform => {
            let diff = x.sub(y)?;
            Ok(diff.values().chunks(diff.dim()).map(euclid).fold(0.0, f64::max))
        }
    }
}

/// Ground-distance matrix between the atoms of two path laws.
pub fn path_distances(mu: &WeightedPathMeasure, nu: &WeightedPathMeasure, alpha: f64, metric: PathMetric) -> Result<Vec<f64>> {
    mu.check_common_grid()?;
    nu.check_common_grid()?;
    if mu.grid() != nu.grid() || mu.path_dim() != nu.path_dim() {
        return domain("path laws must share a grid and dimension");
    }
    let (xs, ys) = (mu.atoms(), nu.atoms());
    let b = ys.len();
    match metric {
        PathMetric::RhoAlpha => {
            let lx = xs.iter().map(lift_piecewise_linear).collect::<Result<Vec<_>>>()?;
            let ly = ys.iter().map(lift_piecewise_linear).collect::<Result<Vec<_>>>()?;
            (0..xs.len() * b).into_par_iter().map(|k| rho_alpha(&lx[k / b], &ly[k % b], alpha)).collect()
        }
        _ => (0..xs.len() * b).into_par_iter().map(|k| ground_distance(&xs[k / b], &ys[k % b], alpha, metric)).collect(),
    }
}

/// `W_r` between two path laws under the chosen ground metric.
pub fn wasserstein_paths(
    mu: &WeightedPathMeasure,
    nu: &WeightedPathMeasure,
    alpha: f64,
    r: f64,
    metric: PathMetric,
) -> Result<Transport> {
    for len in [mu.len(), nu.len()] {
        if len > DEFAULT_SUPPORT_CAP {
            return Err(Error::TooLarge { size: len, cap: DEFAULT_SUPPORT_CAP });
        }
    }
    let dist = path_distances(mu, nu, alpha, metric)?;
    let p = TransportProblem::from_distances(mu.weights().to_vec(), nu.weights().to_vec(), &dist, r)?;
    wasserstein(&p, r)
}
