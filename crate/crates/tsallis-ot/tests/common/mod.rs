//! Shared oracles for the integration suites. Everything here is computed
//! by a route independent of the code under test: grid and golden-section
//! searches instead of closed forms, CDF integrals instead of linear
//! programs, and the deformed-logarithm divergence instead of the
//! f_q-weighted sum.

#![allow(dead_code)]

use ndarray::Array2;
use tsallis_ot::{
    f_q, q_log, tsallis_divergence_vs_product, CostMatrix, Coupling, DiscreteMeasure, QParam,
};

/// Golden-section minimizer of a unimodal function on `[lo, hi]`.
pub fn golden_min(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    const INVPHI: f64 = 0.618_033_988_749_894_8;
    let mut a = hi - INVPHI * (hi - lo);
    let mut b = lo + INVPHI * (hi - lo);
    let mut fa = f(a);
    let mut fb = f(b);
    for _ in 0..200 {
        if fa <= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - INVPHI * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + INVPHI * (hi - lo);
            fb = f(b);
        }
    }
    0.5 * (lo + hi)
}

/// Grid search for `sup_x (x * y - f_q(x))` over `x in [0, x_max]`.
pub fn conjugate_by_grid(q: QParam, y: f64, x_max: f64, steps: usize) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for k in 0..=steps {
        let x = x_max * k as f64 / steps as f64;
        let v = x * y - f_q(q, x).unwrap();
        if v > best {
            best = v;
        }
    }
    best
}

/// Divergence through the deformed logarithm: `sum_i p_i log_{2-q}(p_i / r_i)`,
/// the dual route to the `f_q`-weighted sum. At `q = 1` the order-1 logarithm
/// is the natural one and the sum is the Kullback-Leibler divergence.
pub fn divergence_dual_form(q: f64, p: &[f64], r: &[f64]) -> f64 {
    assert_eq!(p.len(), r.len());
    let mut total = 0.0;
    for (&pi, &ri) in p.iter().zip(r) {
        if pi == 0.0 {
            continue;
        }
        if ri == 0.0 {
            return f64::INFINITY;
        }
        total += pi * q_log(2.0 - q, pi / ri).unwrap();
    }
    total
}

/// Exact 1-Wasserstein distance between one-dimensional measures via the
/// integral of the CDF gap, entirely without linear programming.
pub fn monotone_w1(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> f64 {
    assert_eq!(mu.dim(), 1);
    assert_eq!(nu.dim(), 1);
    let mut points: Vec<(f64, f64, f64)> = Vec::new();
    for i in 0..mu.len() {
        points.push((mu.atom(i)[0], mu.weight(i), 0.0));
    }
    for j in 0..nu.len() {
        points.push((nu.atom(j)[0], 0.0, nu.weight(j)));
    }
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut w1 = 0.0;
    let mut cdf_gap = 0.0f64;
    let mut prev = points[0].0;
    for (x, dmu, dnu) in points {
        w1 += cdf_gap.abs() * (x - prev);
        cdf_gap += dmu - dnu;
        prev = x;
    }
    w1
}

/// The regularized primal objective of an explicit coupling:
/// `sum c * pi + epsilon * D_q(pi, mu1 (x) mu2)`.
pub fn primal_objective_of(
    pi: &Coupling,
    cost: &CostMatrix,
    q: QParam,
    epsilon: f64,
) -> f64 {
    let transport: f64 = cost
        .values()
        .iter()
        .zip(pi.weights().iter())
        .map(|(&c, &w)| c * w)
        .sum();
    transport + epsilon * tsallis_divergence_vs_product(pi, q).unwrap()
}

/// A cost matrix with entries drawn independently from `[0, 1)`, which makes
/// ties (and so degenerate optima) have probability zero.
pub fn generic_cost(rng: &mut impl rand::Rng, m: usize, n: usize) -> CostMatrix {
    let values = Array2::from_shape_fn((m, n), |_| rng.random::<f64>());
    CostMatrix::custom(values).unwrap()
}
