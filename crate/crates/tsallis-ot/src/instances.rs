//! Seeded random instances: measures, couplings, and kernels.
//!
//! Everything here is driven by an explicit RNG so tests and experiments
//! are reproducible; [`seeded_rng`] gives a fixed-algorithm generator whose
//! streams are stable across platforms and releases.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::measures::{product_measure, Coupling, DiscreteMeasure, StochasticKernel};

/// A reproducible RNG for the given seed.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Normalizes positive weights to total mass one; the largest entry absorbs
/// the final rounding residue so the sum lands within one ulp of 1.
fn normalize(mut w: Vec<f64>) -> Vec<f64> {
    let sum: f64 = w.iter().sum();
    for x in w.iter_mut() {
        *x /= sum;
    }
    let residue = 1.0 - w.iter().sum::<f64>();
    let imax = w
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("nonempty");
    w[imax] += residue;
    w
}

/// Random measure: `n` atoms uniform in `[0, 1]^d`, weights from normalized
/// exponentials (strictly positive).
pub fn random_measure(rng: &mut impl Rng, n: usize, d: usize) -> DiscreteMeasure {
    assert!(n > 0 && d > 0, "need at least one atom and one dimension");
    loop {
        let atoms: Vec<f64> = (0..n * d).map(|_| rng.random::<f64>()).collect();
        let atoms = Array2::from_shape_vec((n, d), atoms).expect("n x d shape");
        let weights: Vec<f64> = (0..n)
            .map(|_| -(1.0 - rng.random::<f64>()).ln())
            .collect();
        let weights = Array1::from_vec(normalize(weights));
        // Duplicate atoms have probability zero but would violate the
        // measure invariants; resample if the draw was degenerate.
        if let Ok(mu) = DiscreteMeasure::new(atoms, weights) {
            return mu;
        }
    }
}

/// Random feasible coupling of `mu` and `nu`: the product coupling
/// perturbed by random four-cell exchanges, which preserve both marginals.
pub fn random_coupling(
    rng: &mut impl Rng,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    kicks: usize,
) -> Coupling {
    let base = product_measure(mu, nu);
    let (m, n) = base.weights().dim();
    if m < 2 || n < 2 {
        return base;
    }
    let mut w = base.weights().clone();
    for _ in 0..kicks {
        let i1 = rng.random_range(0..m);
        let i2 = rng.random_range(0..m);
        let j1 = rng.random_range(0..n);
        let j2 = rng.random_range(0..n);
        if i1 == i2 || j1 == j2 {
            continue;
        }
        // delta > 0 moves mass onto the (i1,j1)/(i2,j2) diagonal of the
        // 2x2 minor; the bounds keep all four cells nonnegative.
        let down = w[(i1, j1)].min(w[(i2, j2)]);
        let up = w[(i1, j2)].min(w[(i2, j1)]);
        let delta = -down + rng.random::<f64>() * (down + up);
        w[(i1, j1)] = (w[(i1, j1)] + delta).max(0.0);
        w[(i2, j2)] = (w[(i2, j2)] + delta).max(0.0);
        w[(i1, j2)] = (w[(i1, j2)] - delta).max(0.0);
        w[(i2, j1)] = (w[(i2, j1)] - delta).max(0.0);
    }
    Coupling::new(w, mu.clone(), nu.clone()).expect("exchanges preserve marginals")
}

/// Random row-stochastic kernel from normalized exponentials.
pub fn random_kernel(rng: &mut impl Rng, sources: usize, targets: usize) -> StochasticKernel {
    assert!(sources > 0 && targets > 0, "kernel must be nonempty");
    let mut rows = Array2::zeros((sources, targets));
    for i in 0..sources {
        let w: Vec<f64> = (0..targets)
            .map(|_| -(1.0 - rng.random::<f64>()).ln())
            .collect();
        let w = normalize(w);
        for (j, &x) in w.iter().enumerate() {
            rows[(i, j)] = x;
        }
    }
    StochasticKernel::new(rows).expect("normalized rows are stochastic")
}
