//! Unregularized optimal transport: exact linear-programming solves and
//! Wasserstein distances.
//!
//! The workhorse is a transportation-simplex solver ([`solve_exact`])
//! operating directly on the `m + n - 1`-edge spanning-tree bases of the
//! transport polytope. It returns a vertex-optimal coupling together with
//! the optimal value and certifies optimality through the reduced costs of
//! the final basis. An exhaustive permutation search ([`solve_bruteforce`])
//! is kept as an independent oracle for small equal-weight instances, where
//! the Birkhoff theorem guarantees the optimum sits on a permutation
//! matrix.
//!
//! [`wasserstein_p`] composes the solver with the Euclidean power cost
//! `|x - y|^p`, and [`wasserstein_p_couplings`] measures the distance
//! between two couplings by viewing each as a discrete measure on the
//! product space.

use ndarray::Array2;
use serde::Serialize;

use crate::error::{OtError, Result};
use crate::measures::{build_cost, CostFamily, CostMatrix, Coupling, DiscreteMeasure};

/// How an [`ExactSolution`] was computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExactMethod {
    /// Transportation simplex on the full polytope.
    Lp,
    /// Exhaustive search over permutation vertices.
    PermutationBruteforce,
}

/// An optimal solution of the transport linear program.
#[derive(Debug, Clone)]
pub struct ExactSolution {
    pub coupling: Coupling,
    /// Optimal cost `sum_ij c[i][j] pi[i][j]`.
    pub value: f64,
    pub method: ExactMethod,
}

/// Safety cap on simplex pivots; generous, since the expected count is a
/// small multiple of `m + n`.
fn pivot_cap(m: usize, n: usize) -> usize {
    2_000 + 64 * (m + n)
}

/// Consecutive zero-gain pivots tolerated under the steepest-descent rule
/// before switching to Bland's rule, which cannot cycle.
const DEGENERATE_STREAK_LIMIT: usize = 40;

// ====== transportation simplex ======

struct Simplex<'a> {
    cost: &'a Array2<f64>,
    m: usize,
    n: usize,
    flow: Array2<f64>,
    /// Basis edges, a spanning tree of the bipartite row/column graph.
    basis: Vec<(usize, usize)>,
    in_basis: Vec<bool>,
    /// Scale for reduced-cost tolerances.
    cost_scale: f64,
}

impl<'a> Simplex<'a> {
    fn new(cost: &'a Array2<f64>, supply: &[f64], demand: &[f64]) -> Self {
        let (m, n) = cost.dim();
        // Northwest-corner initialization: a staircase of exactly
        // m + n - 1 cells, each step exhausting one row or one column.
        let mut flow = Array2::zeros((m, n));
        let mut basis = Vec::with_capacity(m + n - 1);
        let mut in_basis = vec![false; m * n];
        let mut s = supply.to_vec();
        let mut d = demand.to_vec();
        let (mut i, mut j) = (0, 0);
        loop {
            let t = s[i].min(d[j]);
            flow[(i, j)] = t;
            basis.push((i, j));
            in_basis[i * n + j] = true;
            s[i] -= t;
            d[j] -= t;
            if i == m - 1 && j == n - 1 {
                break;
            }
            if j == n - 1 || (i < m - 1 && s[i] <= d[j]) {
                i += 1;
            } else {
                j += 1;
            }
        }
        let cost_scale = cost.iter().fold(1.0f64, |a, &c| a.max(c.abs()));
        Simplex {
            cost,
            m,
            n,
            flow,
            basis,
            in_basis,
            cost_scale,
        }
    }

    /// Row/column adjacency lists over the basis tree.
    fn adjacency(&self) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
        let mut rows = vec![Vec::new(); self.m];
        let mut cols = vec![Vec::new(); self.n];
        for (e, &(i, j)) in self.basis.iter().enumerate() {
            rows[i].push(e);
            cols[j].push(e);
        }
        (rows, cols)
    }

    /// Dual potentials from the basis: u[i] + v[j] = c[i][j] on basic
    /// cells, anchored at u[0] = 0. The basis is a spanning tree, so one
    /// sweep determines every potential.
    fn potentials(&self) -> (Vec<f64>, Vec<f64>) {
        let (rows, cols) = self.adjacency();
        let mut u = vec![f64::NAN; self.m];
        let mut v = vec![f64::NAN; self.n];
        u[0] = 0.0;
        // Stack entries: node index, rows then columns offset by m.
        let mut stack = vec![0usize];
        while let Some(node) = stack.pop() {
            if node < self.m {
                for &e in &rows[node] {
                    let (i, j) = self.basis[e];
                    if v[j].is_nan() {
                        v[j] = self.cost[(i, j)] - u[i];
                        stack.push(self.m + j);
                    }
                }
            } else {
                let jn = node - self.m;
                for &e in &cols[jn] {
                    let (i, j) = self.basis[e];
                    if u[i].is_nan() {
                        u[i] = self.cost[(i, j)] - v[j];
                        stack.push(i);
                    }
                }
            }
        }
        (u, v)
    }

    /// Most negative reduced cost among nonbasic cells, or the first
    /// negative one in row-major order under Bland's rule.
    fn entering(&self, u: &[f64], v: &[f64], bland: bool, tol: f64) -> Option<(usize, usize)> {
        let mut best: Option<((usize, usize), f64)> = None;
        for i in 0..self.m {
            for j in 0..self.n {
                if self.in_basis[i * self.n + j] {
                    continue;
                }
                let rc = self.cost[(i, j)] - u[i] - v[j];
                if rc < -tol {
                    if bland {
                        return Some((i, j));
                    }
                    if best.map_or(true, |(_, b)| rc < b) {
                        best = Some(((i, j), rc));
                    }
                }
            }
        }
        best.map(|(cell, _)| cell)
    }

    /// Tree path from row `i0` to column `j0`, as basis-edge indices.
    fn path(&self, i0: usize, j0: usize) -> Vec<usize> {
        let (rows, cols) = self.adjacency();
        let total = self.m + self.n;
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; total]; // (prev node, edge)
        let mut seen = vec![false; total];
        seen[i0] = true;
        let mut queue = std::collections::VecDeque::from([i0]);
        while let Some(node) = queue.pop_front() {
            if node == self.m + j0 {
                break;
            }
            let edges = if node < self.m {
                &rows[node]
            } else {
                &cols[node - self.m]
            };
            for &e in edges {
                let (i, j) = self.basis[e];
                let other = if node < self.m { self.m + j } else { i };
                if !seen[other] {
                    seen[other] = true;
                    parent[other] = Some((node, e));
                    queue.push_back(other);
                }
            }
        }
        let mut path = Vec::new();
        let mut node = self.m + j0;
        while node != i0 {
            let (prev, e) = parent[node].expect("basis tree is spanning");
            path.push(e);
            node = prev;
        }
        path.reverse(); // edges from i0 towards j0
        path
    }

    /// One pivot step. Returns whether it was degenerate (zero gain), or
    /// `None` when no entering cell exists (optimal basis).
    fn pivot(&mut self, bland: bool) -> Option<bool> {
        let (u, v) = self.potentials();
        let tol = 1e-12 * self.cost_scale;
        let (ei, ej) = self.entering(&u, &v, bland, tol)?;
        let path = self.path(ei, ej);
        // Walking the cycle from the entering cell, path edges from the
        // row end alternate -, +, -, ... The path has odd length, so the
        // alternation is consistent from either end.
        let mut theta = f64::INFINITY;
        let mut leaving: Option<usize> = None;
        for (t, &e) in path.iter().enumerate() {
            if t % 2 == 0 {
                let f = self.flow[self.basis[e]];
                let better = match leaving {
                    None => true,
                    Some(cur) => {
                        f < theta || (f == theta && self.basis[e] < self.basis[cur])
                    }
                };
                if better {
                    theta = f;
                    leaving = Some(e);
                }
            }
        }
        let leaving = leaving.expect("odd cycle has a decreasing edge");
        for (t, &e) in path.iter().enumerate() {
            let cell = self.basis[e];
            if t % 2 == 0 {
                self.flow[cell] -= theta;
            } else {
                self.flow[cell] += theta;
            }
        }
        let out_cell = self.basis[leaving];
        self.flow[out_cell] = 0.0;
        self.in_basis[out_cell.0 * self.n + out_cell.1] = false;
        self.flow[(ei, ej)] = theta;
        self.basis[leaving] = (ei, ej);
        self.in_basis[ei * self.n + ej] = true;
        Some(theta == 0.0)
    }

    /// Certified minimum reduced cost of the current basis.
    fn min_reduced_cost(&self) -> f64 {
        let (u, v) = self.potentials();
        let mut min_rc = 0.0f64;
        for i in 0..self.m {
            for j in 0..self.n {
                if !self.in_basis[i * self.n + j] {
                    min_rc = min_rc.min(self.cost[(i, j)] - u[i] - v[j]);
                }
            }
        }
        min_rc
    }

    fn run(mut self) -> Result<Array2<f64>> {
        let cap = pivot_cap(self.m, self.n);
        let mut degenerate_streak = 0usize;
        for _ in 0..cap {
            let bland = degenerate_streak > DEGENERATE_STREAK_LIMIT;
            match self.pivot(bland) {
                None => {
                    let min_rc = self.min_reduced_cost();
                    if min_rc < -1e-9 * self.cost_scale {
                        return Err(OtError::numerical(format!(
                            "simplex stopped with uncertified basis: reduced cost {min_rc:e}"
                        )));
                    }
                    return Ok(self.flow);
                }
                Some(true) => degenerate_streak += 1,
                Some(false) => degenerate_streak = 0,
            }
        }
        Err(OtError::numerical(format!(
            "simplex exceeded {cap} pivots; residual reduced cost {:e}",
            self.min_reduced_cost()
        )))
    }
}

// ====== public solves ======

/// Solves the transport linear program exactly and returns a vertex-optimal
/// coupling.
pub fn solve_exact(
    cost: &CostMatrix,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
) -> Result<ExactSolution> {
    if cost.shape() != (mu.len(), nu.len()) {
        return Err(OtError::usage(format!(
            "cost is {:?}, measures are {}x{}",
            cost.shape(),
            mu.len(),
            nu.len()
        )));
    }
    let supply = mu.weights().to_vec();
    let demand = nu.weights().to_vec();
    let flow = Simplex::new(cost.values(), &supply, &demand).run()?;
    let value = objective(cost.values(), &flow);
    let coupling = Coupling::new(flow, mu.clone(), nu.clone())?;
    Ok(ExactSolution {
        coupling,
        value,
        method: ExactMethod::Lp,
    })
}

fn objective(cost: &Array2<f64>, flow: &Array2<f64>) -> f64 {
    cost.iter().zip(flow.iter()).map(|(&c, &f)| c * f).sum()
}

/// Exhaustive search over permutation couplings. Valid only for instances
/// with the same number of equally weighted atoms on both sides, where the
/// optimum is attained at a permutation matrix; limited to 8 atoms.
pub fn solve_bruteforce(
    cost: &CostMatrix,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
) -> Result<ExactSolution> {
    let n = mu.len();
    if nu.len() != n {
        return Err(OtError::usage(
            "permutation search needs equally many atoms on both sides",
        ));
    }
    if n > 8 {
        return Err(OtError::usage(format!(
            "permutation search is exhaustive; {n} atoms exceed the limit of 8"
        )));
    }
    if cost.shape() != (n, n) {
        return Err(OtError::usage("cost shape does not match the measures"));
    }
    let w = 1.0 / n as f64;
    let equal = |m: &DiscreteMeasure| m.weights().iter().all(|&x| (x - w).abs() <= 1e-12);
    if !equal(mu) || !equal(nu) {
        return Err(OtError::usage(
            "permutation search needs equal weights 1/n on both sides",
        ));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best: Option<(f64, Vec<usize>)> = None;
    // Heap's algorithm, iterative form.
    let mut c = vec![0usize; n];
    let consider = |perm: &[usize], best: &mut Option<(f64, Vec<usize>)>| {
        let total: f64 = perm
            .iter()
            .enumerate()
            .map(|(i, &j)| cost.values()[(i, j)])
            .sum();
        if best.as_ref().map_or(true, |(b, _)| total < *b) {
            *best = Some((total, perm.to_vec()));
        }
    };
    consider(&perm, &mut best);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            consider(&perm, &mut best);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    let (total, perm) = best.expect("at least the identity permutation");
    let mut flow = Array2::zeros((n, n));
    for (i, &j) in perm.iter().enumerate() {
        flow[(i, j)] = mu.weight(i);
    }
    let value = total * w;
    let coupling = Coupling::new(flow, mu.clone(), nu.clone())?;
    Ok(ExactSolution {
        coupling,
        value,
        method: ExactMethod::PermutationBruteforce,
    })
}

/// The `p`-Wasserstein distance between two discrete measures, computed
/// from an exact solve of the power cost `|x - y|^p`.
pub fn wasserstein_p(mu: &DiscreteMeasure, nu: &DiscreteMeasure, p: f64) -> Result<f64> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(OtError::usage(format!(
            "Wasserstein order must be finite and >= 1, got {p}"
        )));
    }
    let cost = build_cost(mu, nu, CostFamily::LpPower(p))?;
    let sol = solve_exact(&cost, mu, nu)?;
    let v = sol.value.max(0.0);
    Ok(if p == 1.0 {
        v
    } else if p == 2.0 {
        v.sqrt()
    } else {
        v.powf(1.0 / p)
    })
}

/// A coupling viewed as a discrete measure on the product space: one atom
/// `(x_i, y_j)` per cell with positive weight.
pub fn coupling_as_measure(pi: &Coupling) -> DiscreteMeasure {
    let d1 = pi.left().dim();
    let d2 = pi.right().dim();
    let mut atoms = Vec::new();
    let mut weights = Vec::new();
    for ((i, j), &w) in pi.weights().indexed_iter() {
        if w > 0.0 {
            atoms.extend(pi.left().atom(i).iter());
            atoms.extend(pi.right().atom(j).iter());
            weights.push(w);
        }
    }
    let n = weights.len();
    let atoms = Array2::from_shape_vec((n, d1 + d2), atoms).expect("n x (d1+d2) shape");
    DiscreteMeasure::new(atoms, ndarray::Array1::from_vec(weights))
        .expect("support of a valid coupling is a valid measure")
}

/// The `p`-Wasserstein distance between two couplings on the same product
/// space, each viewed as a measure via [`coupling_as_measure`].
///
/// The ground cost is the split form `|x - x'|^p + |y - y'|^p` (Euclidean
/// norms within each factor), the metric under which the shadow
/// construction's Wasserstein identity is exact. For `p = 2` this agrees
/// with the squared Euclidean distance on the concatenated space.
pub fn wasserstein_p_couplings(a: &Coupling, b: &Coupling, p: f64) -> Result<f64> {
    let da = (a.left().dim(), a.right().dim());
    let db = (b.left().dim(), b.right().dim());
    if da != db {
        return Err(OtError::usage(format!(
            "couplings live on different product spaces: {da:?} vs {db:?}"
        )));
    }
    if !(p >= 1.0) || !p.is_finite() {
        return Err(OtError::usage(format!(
            "Wasserstein order must be finite and >= 1, got {p}"
        )));
    }
    let support = |pi: &Coupling| -> Vec<(usize, usize)> {
        pi.weights()
            .indexed_iter()
            .filter(|(_, w)| **w > 0.0)
            .map(|(idx, _)| idx)
            .collect()
    };
    let sa = support(a);
    let sb = support(b);
    let dist_pow = |u: ndarray::ArrayView1<f64>, v: ndarray::ArrayView1<f64>| -> f64 {
        let sq: f64 = u.iter().zip(v.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
        if p == 1.0 {
            sq.sqrt()
        } else if p == 2.0 {
            sq
        } else {
            sq.sqrt().powf(p)
        }
    };
    let mut cost = Array2::zeros((sa.len(), sb.len()));
    for (s, &(i, j)) in sa.iter().enumerate() {
        for (t, &(i2, j2)) in sb.iter().enumerate() {
            cost[(s, t)] = dist_pow(a.left().atom(i), b.left().atom(i2))
                + dist_pow(a.right().atom(j), b.right().atom(j2));
        }
    }
    let ma = coupling_as_measure(a);
    let mb = coupling_as_measure(b);
    let sol = solve_exact(&CostMatrix::custom(cost)?, &ma, &mb)?;
    let v = sol.value.max(0.0);
    Ok(if p == 1.0 { v } else { v.powf(1.0 / p) })
}
