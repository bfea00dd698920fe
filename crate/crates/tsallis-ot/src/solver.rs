//! Regularized transport solvers.
//!
//! The problem is
//!
//! ```text
//! inf { sum_ij c[i][j] pi[i][j] + eps D_q(pi, mu (x) nu) :  pi in Pi(mu, nu) }
//! ```
//!
//! and its Fenchel dual over potentials `h1 (+) h2`,
//!
//! ```text
//! sup { <h1, mu> + <h2, nu>
//!       - eps sum_ij mu_i nu_j f_q*((h1_i + h2_j - c[i][j]) / eps) }.
//! ```
//!
//! Three routes compute it, deliberately independent of one another:
//!
//! * [`solve_dual`]: blockwise coordinate ascent on the dual. Each
//!   potential update solves a monotone 1-D root equation with a
//!   guaranteed bracket (safeguarded Newton over bisection, never bare
//!   Newton: `(f_q*)'` is flat left of its kink). The primal plan is read
//!   off the potentials through `(f_q*)'` and rounded onto the polytope.
//! * [`solve_primal`]: a feasible-start interior-point method on the
//!   primal itself: log-barrier Newton path following with the marginal
//!   constraints eliminated through a dense Schur complement. Its dual
//!   certificate comes from the barrier KKT multipliers, so agreement with
//!   `solve_dual` cross-validates both code paths.
//! * [`sinkhorn_kl`]: classical log-domain Sinkhorn for the `q = 1`
//!   (Kullback-Leibler) baseline.
//!
//! Every report certifies its value by the duality gap: `dual_value` is a
//! true lower bound for any potentials (weak duality), `primal_value` the
//! cost of an actually feasible coupling. Non-convergence is reported, not
//! raised: a report with `converged = false` still carries valid bounds.
//!
//! Solves are single-threaded and deterministic; callers own parallelism
//! across instances.

use ndarray::Array2;

use crate::error::{OtError, Result};
use crate::measures::{CostMatrix, Coupling, DiscreteMeasure};
use crate::qcalc::{
    f_q, f_q_prime, f_q_star, f_q_star_prime, f_q_star_second, tsallis_divergence_vs_product,
    QParam,
};

// ====== configuration and report ======

/// Solver configuration. `tol_gap` is a relative duality-gap target; the
/// scale is `max(1, |primal|, |dual|)`.
#[derive(Debug, Clone, Copy)]
pub struct SolveConfig {
    pub q: QParam,
    pub epsilon: f64,
    pub max_iter: usize,
    pub tol_gap: f64,
    pub tol_marginal: f64,
}

impl SolveConfig {
    /// Defaults: `max_iter = 10_000`, `tol_gap = 1e-6`,
    /// `tol_marginal = 1e-9`.
    pub fn new(q: QParam, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(OtError::usage(format!(
                "regularization strength must be positive and finite, got {epsilon}"
            )));
        }
        Ok(SolveConfig {
            q,
            epsilon,
            max_iter: 10_000,
            tol_gap: 1e-6,
            tol_marginal: 1e-9,
        })
    }

    pub fn with_tol_gap(mut self, tol: f64) -> Result<Self> {
        if !(tol > 0.0) {
            return Err(OtError::usage(format!("tol_gap must be positive, got {tol}")));
        }
        self.tol_gap = tol;
        Ok(self)
    }

    pub fn with_tol_marginal(mut self, tol: f64) -> Result<Self> {
        if !(tol > 0.0) {
            return Err(OtError::usage(format!(
                "tol_marginal must be positive, got {tol}"
            )));
        }
        self.tol_marginal = tol;
        Ok(self)
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Result<Self> {
        if max_iter == 0 {
            return Err(OtError::usage("max_iter must be at least 1"));
        }
        self.max_iter = max_iter;
        Ok(self)
    }
}

/// Dual potentials, one value per atom on each side.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPotentials {
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
}

/// Outcome of a regularized solve. The coupling is always feasible (within
/// `tol_marginal`); `converged` says whether the gap target was met within
/// the iteration budget.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub coupling: Coupling,
    pub potentials: DualPotentials,
    /// Objective of the returned (feasible) coupling: upper bound.
    pub primal_value: f64,
    /// Certified lower bound from the returned potentials.
    pub dual_value: f64,
    /// `primal_value - dual_value`; nonnegative up to roundoff.
    pub gap: f64,
    /// Outer iterations (sweeps for the ascent methods, Newton steps for
    /// the interior-point method).
    pub iterations: usize,
    pub converged: bool,
    /// Dual objective after each outer iteration; nondecreasing for the
    /// ascent methods.
    pub dual_trace: Vec<f64>,
}

impl SolveReport {
    /// The gap on the stopping scale `max(1, |primal|, |dual|)`.
    pub fn relative_gap(&self) -> f64 {
        relative_gap(self.gap, self.primal_value, self.dual_value)
    }
}

fn relative_gap(gap: f64, primal: f64, dual: f64) -> f64 {
    gap / 1.0f64.max(primal.abs()).max(dual.abs())
}

// ====== objectives ======

/// Primal objective `sum c pi + eps D_q(pi, mu (x) nu)`, where the
/// reference is the product of the coupling's own marginals. Returns
/// `+inf` if the plan puts mass where the product vanishes.
pub fn primal_objective(pi: &Coupling, c: &CostMatrix, cfg: &SolveConfig) -> Result<f64> {
    if c.shape() != (pi.left().len(), pi.right().len()) {
        return Err(OtError::usage(format!(
            "cost is {:?}, coupling is {}x{}",
            c.shape(),
            pi.left().len(),
            pi.right().len()
        )));
    }
    let mut transport = 0.0;
    for ((i, j), &w) in pi.weights().indexed_iter() {
        transport += c.values()[(i, j)] * w;
    }
    let divergence = tsallis_divergence_vs_product(pi, cfg.q)?;
    Ok(transport + cfg.epsilon * divergence)
}

/// Dual objective
/// `<h1, mu> + <h2, nu> - eps sum_ij mu_i nu_j f_q*((h1_i + h2_j - c_ij)/eps)`.
///
/// A lower bound on the primal optimum for any finite potentials.
pub fn dual_objective(
    h: &DualPotentials,
    c: &CostMatrix,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cfg: &SolveConfig,
) -> Result<f64> {
    if h.h1.len() != mu.len() || h.h2.len() != nu.len() {
        return Err(OtError::usage(format!(
            "potentials are {}/{}, measures are {}/{}",
            h.h1.len(),
            h.h2.len(),
            mu.len(),
            nu.len()
        )));
    }
    if c.shape() != (mu.len(), nu.len()) {
        return Err(OtError::usage("cost shape does not match the measures"));
    }
    let mut value = 0.0;
    for (i, &w) in mu.weights().iter().enumerate() {
        value += h.h1[i] * w;
    }
    for (j, &w) in nu.weights().iter().enumerate() {
        value += h.h2[j] * w;
    }
    let mut conjugate = 0.0;
    for (i, &wi) in mu.weights().iter().enumerate() {
        if wi == 0.0 {
            continue;
        }
        for (j, &wj) in nu.weights().iter().enumerate() {
            if wj == 0.0 {
                continue;
            }
            let y = (h.h1[i] + h.h2[j] - c.values()[(i, j)]) / cfg.epsilon;
            conjugate += wi * wj * f_q_star(cfg.q, y);
        }
    }
    Ok(value - cfg.epsilon * conjugate)
}

// ====== rounding onto the polytope ======

/// Projects a nonnegative matrix onto the transport polytope of `(mu, nu)`:
/// rows are scaled down to their targets, then columns, and the remaining
/// deficiency is filled by a rank-one completion. Marginals of the result
/// match to roundoff, and the perturbation is of the order of the input's
/// own marginal defect.
pub fn round_to_marginals(
    raw: &Array2<f64>,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
) -> Result<Coupling> {
    let (m, n) = raw.dim();
    if m != mu.len() || n != nu.len() {
        return Err(OtError::usage(format!(
            "matrix is {m}x{n}, measures are {}x{}",
            mu.len(),
            nu.len()
        )));
    }
    if raw.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(OtError::numerical(
            "rounding input must be finite and nonnegative",
        ));
    }
    let mut out = raw.clone();
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if sum > mu.weight(i) {
            let scale = mu.weight(i) / sum;
            row.mapv_inplace(|w| w * scale);
        }
    }
    let mut col_sums = vec![0.0; n];
    for row in out.rows() {
        for (j, &w) in row.iter().enumerate() {
            col_sums[j] += w;
        }
    }
    for j in 0..n {
        if col_sums[j] > nu.weight(j) {
            let scale = nu.weight(j) / col_sums[j];
            for i in 0..m {
                out[(i, j)] *= scale;
            }
        }
    }
    // Residual deficiencies are nonnegative by construction; the rank-one
    // completion restores both marginals at once.
    let mut err_r = vec![0.0; m];
    for (i, row) in out.rows().into_iter().enumerate() {
        err_r[i] = (mu.weight(i) - row.iter().sum::<f64>()).max(0.0);
    }
    let mut err_c = vec![0.0; n];
    for j in 0..n {
        let sum: f64 = (0..m).map(|i| out[(i, j)]).sum();
        err_c[j] = (nu.weight(j) - sum).max(0.0);
    }
    let total: f64 = err_r.iter().sum();
    if total > 0.0 {
        for i in 0..m {
            if err_r[i] == 0.0 {
                continue;
            }
            for j in 0..n {
                out[(i, j)] += err_r[i] * err_c[j] / total;
            }
        }
    }
    Coupling::new(out, mu.clone(), nu.clone())
}

// ====== dual blockwise ascent ======

/// One coordinate equation: find `t` with
/// `sum_k w_k (f_q*)'((t - a_k)/eps) = 1`. The left side is nondecreasing
/// in `t` and the root lies in `[eps + min a, eps + max a]` because
/// `(f_q*)'(1) = 1` and the weights sum to 1. Safeguarded Newton: the
/// bracket only shrinks, so the flat region of `(f_q*)'` cannot strand the
/// iteration.
fn solve_coordinate(terms: &[(f64, f64)], eps: f64, q: QParam, warm: f64) -> f64 {
    debug_assert!(!terms.is_empty());
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &(a, _) in terms {
        lo = lo.min(a);
        hi = hi.max(a);
    }
    lo += eps;
    hi += eps;
    if hi <= lo {
        return lo;
    }
    let mut t = warm.clamp(lo, hi);
    for _ in 0..160 {
        let mut s = 0.0;
        let mut slope = 0.0;
        for &(a, w) in terms {
            let y = (t - a) / eps;
            s += w * f_q_star_prime(q, y);
            slope += w * f_q_star_second(q, y);
        }
        let g = s - 1.0;
        if g > 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        if g.abs() <= 1e-13 {
            return t;
        }
        if hi - lo <= 1e-14 * (1.0 + lo.abs().max(hi.abs())) {
            return 0.5 * (lo + hi);
        }
        let mut next = 0.5 * (lo + hi);
        let gp = slope / eps;
        if gp.is_finite() && gp > 0.0 {
            let newton = t - g / gp;
            if newton > lo && newton < hi {
                next = newton;
            }
        }
        t = next;
    }
    0.5 * (lo + hi)
}

/// Plan read off the potentials: `pi_ij = mu_i nu_j (f_q*)'(y_ij)`.
fn first_order_coupling(
    h1: &[f64],
    h2: &[f64],
    c: &Array2<f64>,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cfg: &SolveConfig,
) -> Array2<f64> {
    let (m, n) = c.dim();
    let mut raw = Array2::zeros((m, n));
    for i in 0..m {
        let wi = mu.weight(i);
        if wi == 0.0 {
            continue;
        }
        for j in 0..n {
            let wj = nu.weight(j);
            if wj == 0.0 {
                continue;
            }
            let y = (h1[i] + h2[j] - c[(i, j)]) / cfg.epsilon;
            raw[(i, j)] = wi * wj * f_q_star_prime(cfg.q, y);
        }
    }
    raw
}

/// Blockwise dual ascent. Alternates exact maximization over `h1` and `h2`
/// until the relative duality gap reaches `cfg.tol_gap`.
pub fn solve_dual(
    c: &CostMatrix,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cfg: &SolveConfig,
) -> Result<SolveReport> {
    let (m, n) = (mu.len(), nu.len());
    if c.shape() != (m, n) {
        return Err(OtError::usage("cost shape does not match the measures"));
    }
    let cv = c.values();
    let mut h1 = vec![0.0; m];
    let mut h2 = vec![0.0; n];
    let mut terms: Vec<(f64, f64)> = Vec::with_capacity(m.max(n));
    let mut trace = Vec::new();
    let mut state: Option<(Coupling, f64, f64, usize, bool)> = None;
    for iter in 1..=cfg.max_iter {
        for i in 0..m {
            terms.clear();
            for j in 0..n {
                let w = nu.weight(j);
                if w > 0.0 {
                    terms.push((cv[(i, j)] - h2[j], w));
                }
            }
            h1[i] = solve_coordinate(&terms, cfg.epsilon, cfg.q, h1[i]);
        }
        for j in 0..n {
            terms.clear();
            for i in 0..m {
                let w = mu.weight(i);
                if w > 0.0 {
                    terms.push((cv[(i, j)] - h1[i], w));
                }
            }
            h2[j] = solve_coordinate(&terms, cfg.epsilon, cfg.q, h2[j]);
        }
        let pots = DualPotentials {
            h1: h1.clone(),
            h2: h2.clone(),
        };
        let dual = dual_objective(&pots, c, mu, nu, cfg)?;
        trace.push(dual);
        let raw = first_order_coupling(&h1, &h2, cv, mu, nu, cfg);
        let rounded = round_to_marginals(&raw, mu, nu)?;
        let primal = primal_objective(&rounded, c, cfg)?;
        let converged = relative_gap(primal - dual, primal, dual) <= cfg.tol_gap;
        state = Some((rounded, primal, dual, iter, converged));
        if converged {
            break;
        }
    }
    let (coupling, primal, dual, iterations, converged) =
        state.expect("max_iter >= 1 guarantees at least one iteration");
    Ok(SolveReport {
        coupling,
        potentials: DualPotentials { h1, h2 },
        primal_value: primal,
        dual_value: dual,
        gap: primal - dual,
        iterations,
        converged,
        dual_trace: trace,
    })
}

// ====== classical Sinkhorn (q = 1 baseline) ======

fn log_sum_exp(terms: impl Iterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = terms.filter(|x| *x > f64::NEG_INFINITY).collect();
    if xs.is_empty() {
        return f64::NEG_INFINITY;
    }
    let m = xs.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Log-domain Sinkhorn for the Kullback-Leibler case. Kept fully
/// independent of the generic machinery so it can serve as an oracle:
/// the only shared code is the report assembly.
///
/// The classical scalings `(f, g)` relate to the potentials of the `q = 1`
/// dual by the gauge choice `h1 = f + eps`, `h2 = g`.
pub fn sinkhorn_kl(
    c: &CostMatrix,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cfg: &SolveConfig,
) -> Result<SolveReport> {
    if !cfg.q.is_kl() {
        return Err(OtError::usage(format!(
            "this routine is the q = 1 baseline, got q = {}",
            cfg.q
        )));
    }
    let (m, n) = (mu.len(), nu.len());
    if c.shape() != (m, n) {
        return Err(OtError::usage("cost shape does not match the measures"));
    }
    let cv = c.values();
    let eps = cfg.epsilon;
    let ln_mu: Vec<f64> = mu.weights().iter().map(|w| w.ln()).collect();
    let ln_nu: Vec<f64> = nu.weights().iter().map(|w| w.ln()).collect();
    let mut f = vec![0.0; m];
    let mut g = vec![0.0; n];
    let mut trace = Vec::new();
    let mut state: Option<(Coupling, f64, f64, usize, bool)> = None;
    for iter in 1..=cfg.max_iter {
        for i in 0..m {
            f[i] = -eps * log_sum_exp((0..n).map(|j| ln_nu[j] + (g[j] - cv[(i, j)]) / eps));
        }
        for j in 0..n {
            g[j] = -eps * log_sum_exp((0..m).map(|i| ln_mu[i] + (f[i] - cv[(i, j)]) / eps));
        }
        let pots = DualPotentials {
            h1: f.iter().map(|x| x + eps).collect(),
            h2: g.clone(),
        };
        let dual = dual_objective(&pots, c, mu, nu, cfg)?;
        trace.push(dual);
        let mut raw = Array2::zeros((m, n));
        for i in 0..m {
            for j in 0..n {
                raw[(i, j)] = (ln_mu[i] + ln_nu[j] + (f[i] + g[j] - cv[(i, j)]) / eps).exp();
            }
        }
        let rounded = round_to_marginals(&raw, mu, nu)?;
        let primal = primal_objective(&rounded, c, cfg)?;
        let converged = relative_gap(primal - dual, primal, dual) <= cfg.tol_gap;
        state = Some((rounded, primal, dual, iter, converged));
        if converged {
            break;
        }
    }
    let (coupling, primal, dual, iterations, converged) =
        state.expect("max_iter >= 1 guarantees at least one iteration");
    Ok(SolveReport {
        coupling,
        potentials: DualPotentials {
            h1: f.iter().map(|x| x + eps).collect(),
            h2: g,
        },
        primal_value: primal,
        dual_value: dual,
        gap: primal - dual,
        iterations,
        converged,
        dual_trace: trace,
    })
}

// ====== interior-point primal method ======

/// Dense Cholesky solve of a symmetric positive definite system; retries
/// once with a diagonal jitter before giving up.
fn solve_spd(mut s: Array2<f64>, b: &[f64]) -> Result<Vec<f64>> {
    let k = b.len();
    let trace: f64 = (0..k).map(|i| s[(i, i)]).sum();
    for attempt in 0..2 {
        if attempt == 1 {
            let jitter = 1e-12 * (trace / k as f64).max(1e-300);
            for i in 0..k {
                s[(i, i)] += jitter;
            }
        }
        match cholesky_solve(&mut s.clone(), b) {
            Some(x) => return Ok(x),
            None => continue,
        }
    }
    Err(OtError::numerical(
        "constraint system lost positive definiteness",
    ))
}

fn cholesky_solve(s: &mut Array2<f64>, b: &[f64]) -> Option<Vec<f64>> {
    let k = b.len();
    for i in 0..k {
        for j in 0..=i {
            let mut sum = s[(i, j)];
            for p in 0..j {
                sum -= s[(i, p)] * s[(j, p)];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return None;
                }
                s[(i, i)] = sum.sqrt();
            } else {
                s[(i, j)] = sum / s[(j, j)];
            }
        }
    }
    let mut x = b.to_vec();
    for i in 0..k {
        for p in 0..i {
            let t = s[(i, p)] * x[p];
            x[i] -= t;
        }
        x[i] /= s[(i, i)];
    }
    for i in (0..k).rev() {
        for p in (i + 1)..k {
            let t = s[(p, i)] * x[p];
            x[i] -= t;
        }
        x[i] /= s[(i, i)];
    }
    Some(x)
}

/// Indices of strictly positive weights.
fn support(m: &DiscreteMeasure) -> Vec<usize> {
    m.weights()
        .iter()
        .enumerate()
        .filter(|(_, w)| **w > 0.0)
        .map(|(i, _)| i)
        .collect()
}

/// Interior-point solve of the primal: minimize
/// `t (sum c pi + eps sum ref f_q(pi/ref)) - sum ln pi` over the affine
/// marginal constraints for an increasing barrier weight `t`, by feasible
/// Newton steps. The product coupling is the strictly feasible start;
/// zero-weight atoms are removed first and reinstated as zero rows or
/// columns afterwards.
///
/// Independent of [`solve_dual`] end to end; its dual certificate comes
/// from the KKT multipliers of the final barrier subproblem.
pub fn solve_primal(
    c: &CostMatrix,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cfg: &SolveConfig,
) -> Result<SolveReport> {
    let (m_full, n_full) = (mu.len(), nu.len());
    if c.shape() != (m_full, n_full) {
        return Err(OtError::usage("cost shape does not match the measures"));
    }
    let rows = support(mu);
    let cols = support(nu);
    let (m, n) = (rows.len(), cols.len());
    let mw: Vec<f64> = rows.iter().map(|&i| mu.weight(i)).collect();
    let nw: Vec<f64> = cols.iter().map(|&j| nu.weight(j)).collect();
    let mut cost = Array2::zeros((m, n));
    let mut reference = Array2::zeros((m, n));
    for (a, &i) in rows.iter().enumerate() {
        for (b, &j) in cols.iter().enumerate() {
            cost[(a, b)] = c.values()[(i, j)];
            reference[(a, b)] = mw[a] * nw[b];
        }
    }
    let eps = cfg.epsilon;
    let q = cfg.q.get();
    let qp = cfg.q;
    // pi^(q-2)/ref^(q-1), the generator curvature factor, specialized for
    // the exact orders that avoid powf.
    let curvature = |x: f64| -> f64 {
        if q == 2.0 {
            1.0
        } else if q == 1.0 {
            1.0 / x
        } else {
            x.powf(q - 2.0)
        }
    };
    let objective = |pi: &Array2<f64>| -> f64 {
        let mut total = 0.0;
        for ((a, b), &w) in pi.indexed_iter() {
            let r = reference[(a, b)];
            total += cost[(a, b)] * w + eps * r * f_q(qp, w / r).expect("positive ratio");
        }
        total
    };
    let barrier = |pi: &Array2<f64>, t: f64| -> f64 {
        if pi.iter().any(|w| *w <= 0.0) {
            return f64::INFINITY;
        }
        t * objective(pi) - pi.iter().map(|w| w.ln()).sum::<f64>()
    };

    let mut pi = reference.clone();
    let mut t = 1.0;
    let k = m + n - 1;
    let mut trace = Vec::new();
    let mut total_newton = 0usize;
    let mut result: Option<(Coupling, DualPotentials, f64, f64, bool)> = None;
    'stages: for _stage in 0..64 {
        let mut multipliers = vec![0.0; k];
        for _step in 0..80 {
            // Gradient and diagonal Hessian of the barrier objective.
            let mut grad = Array2::zeros((m, n));
            let mut hinv = Array2::zeros((m, n));
            for ((a, b), &w) in pi.indexed_iter() {
                let r = reference[(a, b)];
                let x = w / r;
                grad[(a, b)] = t * (cost[(a, b)] + eps * f_q_prime(qp, x)?) - 1.0 / w;
                let h = t * eps * q * curvature(x) / r + 1.0 / (w * w);
                hinv[(a, b)] = 1.0 / h;
            }
            // Schur complement over the m + n - 1 marginal constraints
            // (the last column constraint is redundant and dropped).
            let mut s = Array2::zeros((k, k));
            let mut rhs = vec![0.0; k];
            for a in 0..m {
                let mut diag = 0.0;
                let mut dot = 0.0;
                for b in 0..n {
                    diag += hinv[(a, b)];
                    dot += hinv[(a, b)] * grad[(a, b)];
                }
                s[(a, a)] = diag;
                rhs[a] = -dot;
            }
            for b in 0..n - 1 {
                let mut diag = 0.0;
                let mut dot = 0.0;
                for a in 0..m {
                    diag += hinv[(a, b)];
                    dot += hinv[(a, b)] * grad[(a, b)];
                    s[(a, m + b)] = hinv[(a, b)];
                    s[(m + b, a)] = hinv[(a, b)];
                }
                s[(m + b, m + b)] = diag;
                rhs[m + b] = -dot;
            }
            let y = solve_spd(s, &rhs)?;
            let mut delta = Array2::zeros((m, n));
            let mut decrement = 0.0;
            for ((a, b), d) in delta.indexed_iter_mut() {
                let ycol = if b < n - 1 { y[m + b] } else { 0.0 };
                *d = -hinv[(a, b)] * (grad[(a, b)] + y[a] + ycol);
                decrement -= grad[(a, b)] * *d;
            }
            multipliers = y;
            if decrement <= 2e-12 {
                break;
            }
            if total_newton >= cfg.max_iter {
                break 'stages;
            }
            // Largest feasible step, then Armijo backtracking.
            let mut alpha = 1.0f64;
            for (d, &w) in delta.iter().zip(pi.iter()) {
                if *d < 0.0 {
                    alpha = alpha.min(-0.99 * w / d);
                }
            }
            let phi0 = barrier(&pi, t);
            let slope = -decrement;
            let mut accepted = false;
            for _ in 0..60 {
                let candidate = &pi + &(&delta * alpha);
                if barrier(&candidate, t) <= phi0 + 0.25 * alpha * slope {
                    pi = candidate;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                return Err(OtError::numerical(
                    "interior-point line search failed to make progress",
                ));
            }
            total_newton += 1;
        }
        // Dual certificate from the barrier multipliers; weak duality makes
        // any finite potentials a valid lower bound, so the certificate is
        // honest even before the path has converged.
        let mut h1 = vec![0.0; m_full];
        let mut h2 = vec![0.0; n_full];
        for (a, &i) in rows.iter().enumerate() {
            h1[i] = -multipliers[a] / t;
        }
        for (b, &j) in cols.iter().enumerate().take(n - 1) {
            h2[j] = -multipliers[m + b] / t;
        }
        let pots = DualPotentials { h1, h2 };
        let dual = dual_objective(&pots, c, mu, nu, cfg)?;
        trace.push(dual);
        let mut full = Array2::zeros((m_full, n_full));
        for (a, &i) in rows.iter().enumerate() {
            for (b, &j) in cols.iter().enumerate() {
                full[(i, j)] = pi[(a, b)];
            }
        }
        let rounded = round_to_marginals(&full, mu, nu)?;
        let primal = primal_objective(&rounded, c, cfg)?;
        let converged = relative_gap(primal - dual, primal, dual) <= cfg.tol_gap;
        result = Some((rounded, pots, primal, dual, converged));
        if converged || total_newton >= cfg.max_iter {
            break;
        }
        t *= 20.0;
    }
    let (coupling, potentials, primal, dual, converged) =
        result.ok_or_else(|| OtError::numerical("interior-point method produced no iterate"))?;
    Ok(SolveReport {
        coupling,
        potentials,
        primal_value: primal,
        dual_value: dual,
        gap: primal - dual,
        iterations: total_newton,
        converged,
        dual_trace: trace,
    })
}
