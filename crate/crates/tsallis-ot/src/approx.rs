//! Measure quantization and coupling shadows.
//!
//! Two constructions connect exact transport to its entropic
//! regularization: `quantize` compresses a measure to `n` atoms with a
//! certified Wasserstein error, and `shadow` pushes a coupling through a
//! pair of kernels onto new marginals. `double_shadow` chains the two,
//! carrying an optimal plan to a quantized second marginal and back, and
//! `data_processing_check` evaluates both sides of the divergence
//! contraction that underwrites the shadow construction.

use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::index::sample;

use crate::error::{OtError, Result};
use crate::exact_ot::{solve_exact, wasserstein_p, wasserstein_p_couplings};
use crate::instances::seeded_rng;
use crate::measures::{
    build_cost, push_weights, CostFamily, Coupling, DiscreteMeasure, StochasticKernel,
    MARGINAL_TOL,
};
use crate::qcalc::{tsallis_divergence_vs_product, tsallis_divergence_weights, QParam};

/// Number of independent starts for the Lloyd quantizer in dimension >= 2.
const LLOYD_STARTS: u64 = 16;
/// Iteration cap per Lloyd start.
const LLOYD_MAX_ITERS: usize = 100;

// ====== quantization ======

/// An `n`-point approximation of a measure together with its realized
/// Wasserstein error.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizationResult {
    /// The quantized measure, at most `n` atoms.
    pub quantized: DiscreteMeasure,
    /// `W_p(original, quantized)`, computed by an exact transport solve.
    pub achieved_wp: f64,
    /// Requested atom budget.
    pub n: usize,
    /// Wasserstein order used for cell representatives and the error.
    pub p: f64,
}

/// Compresses `mu` to at most `n` atoms, reporting the exact `W_p` cost of
/// the compression.
///
/// If `n` covers the support, the support of `mu` is returned unchanged
/// with zero error. In dimension one the quantizer is exact: atoms are
/// split fractionally into `n` equal-mass quantile cells and each cell
/// takes its `W_p`-optimal representative (weighted median for `p = 1`,
/// weighted mean for `p = 2`, golden-section minimizer otherwise). In
/// higher dimension a Lloyd iteration with [`LLOYD_STARTS`] deterministic
/// seeded starts is used and the best start by assignment cost wins, ties
/// to the lowest start index.
pub fn quantize(mu: &DiscreteMeasure, n: usize, p: f64) -> Result<QuantizationResult> {
    quantize_with_seed(mu, n, p, 0)
}

/// [`quantize`] with the Lloyd start seeds offset by `seed`.
///
/// Different seeds explore different random initializations in dimension
/// two and up; the one-dimensional quantile path is closed-form and
/// ignores the seed entirely. `seed = 0` reproduces [`quantize`].
pub fn quantize_with_seed(
    mu: &DiscreteMeasure,
    n: usize,
    p: f64,
    seed: u64,
) -> Result<QuantizationResult> {
    if n == 0 {
        return Err(OtError::usage("quantization needs a budget of at least one atom"));
    }
    if !(p >= 1.0) || !p.is_finite() {
        return Err(OtError::usage(format!(
            "quantization order must be finite and >= 1, got {p}"
        )));
    }
    let support = positive_support(mu);
    if n >= support.len() {
        return Ok(QuantizationResult {
            quantized: support,
            achieved_wp: 0.0,
            n,
            p,
        });
    }
    let quantized = if mu.dim() == 1 {
        quantile_quantizer(&support, n, p)?
    } else {
        lloyd_quantizer(&support, n, p, seed)?
    };
    let achieved_wp = wasserstein_p(mu, &quantized, p)?;
    Ok(QuantizationResult {
        quantized,
        achieved_wp,
        n,
        p,
    })
}

/// The measure restricted to atoms of positive weight.
fn positive_support(mu: &DiscreteMeasure) -> DiscreteMeasure {
    let keep: Vec<usize> = (0..mu.len()).filter(|&i| mu.weight(i) > 0.0).collect();
    if keep.len() == mu.len() {
        return mu.clone();
    }
    let d = mu.dim();
    let mut atoms = Array2::zeros((keep.len(), d));
    let mut weights = Array1::zeros(keep.len());
    for (row, &i) in keep.iter().enumerate() {
        atoms.row_mut(row).assign(&mu.atom(i));
        weights[row] = mu.weight(i);
    }
    DiscreteMeasure::new(atoms, weights).expect("restriction to the support stays a measure")
}

/// Exact one-dimensional quantizer: equal-mass quantile cells with
/// fractional atom splitting at the cell boundaries, then the
/// `W_p`-optimal representative of each cell.
fn quantile_quantizer(mu: &DiscreteMeasure, n: usize, p: f64) -> Result<DiscreteMeasure> {
    let mut order: Vec<usize> = (0..mu.len()).collect();
    order.sort_by(|&a, &b| mu.atoms()[(a, 0)].total_cmp(&mu.atoms()[(b, 0)]));
    let total: f64 = order.iter().map(|&i| mu.weight(i)).sum();

    // cells[k] holds (coordinate, mass) pieces for the mass slice
    // [k, k+1) * total / n; an atom straddling a boundary is split.
    let mut cells: Vec<Vec<(f64, f64)>> = vec![Vec::new(); n];
    let mut cell = 0usize;
    let mut acc = 0.0f64;
    for &i in &order {
        let x = mu.atoms()[(i, 0)];
        let mut remaining = mu.weight(i);
        while cell + 1 < n {
            let boundary = (cell + 1) as f64 * total / n as f64;
            if acc + remaining <= boundary {
                break;
            }
            let take = (boundary - acc).max(0.0);
            if take > 0.0 {
                cells[cell].push((x, take));
            }
            acc = boundary;
            remaining -= take;
            cell += 1;
        }
        if remaining > 0.0 {
            cells[cell].push((x, remaining));
            acc += remaining;
        }
    }

    let mut reps: Vec<f64> = Vec::new();
    let mut masses: Vec<f64> = Vec::new();
    for pieces in &cells {
        let mass: f64 = pieces.iter().map(|&(_, w)| w).sum();
        if mass <= 0.0 {
            continue;
        }
        let rep = if p == 1.0 {
            weighted_median(pieces, mass)
        } else if p == 2.0 {
            pieces.iter().map(|&(x, w)| x * w).sum::<f64>() / mass
        } else {
            let lo = pieces.first().expect("nonempty cell").0;
            let hi = pieces.last().expect("nonempty cell").0;
            golden_min(lo, hi, |r| {
                pieces.iter().map(|&(x, w)| w * (x - r).abs().powf(p)).sum()
            })
        };
        reps.push(rep);
        masses.push(mass);
    }

    // Cells are ordered, so duplicate representatives are adjacent.
    let mut atoms: Vec<f64> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    for (r, m) in reps.into_iter().zip(masses) {
        match atoms.last() {
            Some(&last) if last == r => *weights.last_mut().expect("parallel vectors") += m,
            _ => {
                atoms.push(r);
                weights.push(m);
            }
        }
    }
    let k = atoms.len();
    DiscreteMeasure::new(
        Array2::from_shape_vec((k, 1), atoms).expect("k x 1 shape"),
        Array1::from_vec(weights),
    )
}

/// Smallest coordinate whose cumulative mass reaches half the cell.
fn weighted_median(pieces: &[(f64, f64)], total: f64) -> f64 {
    let half = total / 2.0;
    let mut acc = 0.0;
    for &(x, w) in pieces {
        acc += w;
        if acc >= half {
            return x;
        }
    }
    pieces.last().expect("nonempty cell").0
}

/// Golden-section minimizer of a unimodal function on `[lo, hi]`.
fn golden_min(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    const INVPHI: f64 = 0.618_033_988_749_894_8;
    let mut a = hi - INVPHI * (hi - lo);
    let mut b = lo + INVPHI * (hi - lo);
    let mut fa = f(a);
    let mut fb = f(b);
    for _ in 0..160 {
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

/// Squared-Euclidean distance raised to `p/2`, i.e. `|u - v|^p`.
fn euclid_pow(u: ArrayView1<'_, f64>, v: ArrayView1<'_, f64>, p: f64) -> f64 {
    let sq: f64 = u.iter().zip(v.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
    if p == 2.0 {
        sq
    } else if p == 1.0 {
        sq.sqrt()
    } else {
        sq.sqrt().powf(p)
    }
}

/// Lloyd-style alternating quantizer for dimension >= 2. Representatives
/// are weighted cluster means (optimal for `p = 2`, a heuristic
/// otherwise); start ranking always uses the true `|x - rep|^p` cost.
fn lloyd_quantizer(mu: &DiscreteMeasure, n: usize, p: f64, seed: u64) -> Result<DiscreteMeasure> {
    let m = mu.len();
    let d = mu.dim();
    let mut best_obj = f64::INFINITY;
    let mut best_centers = Array2::zeros((n, d));
    let mut best_assign = vec![0usize; m];

    for start in 0..LLOYD_STARTS {
        let mut rng = seeded_rng(seed.wrapping_add(start));
        let picks = sample(&mut rng, m, n).into_vec();
        let mut centers = Array2::zeros((n, d));
        for (c, &pick) in picks.iter().enumerate() {
            centers.row_mut(c).assign(&mu.atom(pick));
        }
        let mut assign = vec![usize::MAX; m];

        for _ in 0..LLOYD_MAX_ITERS {
            let mut changed = false;
            for i in 0..m {
                let mut nearest = 0usize;
                let mut nearest_cost = f64::INFINITY;
                for c in 0..n {
                    let cost = euclid_pow(mu.atom(i), centers.row(c), p);
                    if cost < nearest_cost {
                        nearest_cost = cost;
                        nearest = c;
                    }
                }
                if assign[i] != nearest {
                    assign[i] = nearest;
                    changed = true;
                }
            }

            let mut mass = vec![0.0f64; n];
            let mut sums = Array2::<f64>::zeros((n, d));
            for i in 0..m {
                let w = mu.weight(i);
                mass[assign[i]] += w;
                sums.row_mut(assign[i]).scaled_add(w, &mu.atom(i));
            }
            for c in 0..n {
                if mass[c] > 0.0 {
                    let mut row = sums.row_mut(c);
                    row.mapv_inplace(|v| v / mass[c]);
                    centers.row_mut(c).assign(&row);
                } else {
                    // Re-seed a starved cluster at the costliest atom.
                    let mut worst = 0usize;
                    let mut worst_cost = -1.0;
                    for i in 0..m {
                        let cost =
                            mu.weight(i) * euclid_pow(mu.atom(i), centers.row(assign[i]), p);
                        if cost > worst_cost {
                            worst_cost = cost;
                            worst = i;
                        }
                    }
                    centers.row_mut(c).assign(&mu.atom(worst));
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }

        let obj: f64 = (0..m)
            .map(|i| mu.weight(i) * euclid_pow(mu.atom(i), centers.row(assign[i]), p))
            .sum();
        if obj < best_obj {
            best_obj = obj;
            best_centers = centers;
            best_assign = assign;
        }
    }

    let mut mass = vec![0.0f64; n];
    for i in 0..m {
        mass[best_assign[i]] += mu.weight(i);
    }
    // Canonical order: sort occupied centers lexicographically, merging
    // coincident ones, so the output does not depend on cluster labels.
    let mut kept: Vec<(Vec<f64>, f64)> = (0..n)
        .filter(|&c| mass[c] > 0.0)
        .map(|c| (best_centers.row(c).to_vec(), mass[c]))
        .collect();
    kept.sort_by(|a, b| {
        a.0.iter()
            .zip(b.0.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut atoms: Vec<Vec<f64>> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    for (coords, w) in kept {
        match atoms.last() {
            Some(last) if *last == coords => {
                *weights.last_mut().expect("parallel vectors") += w
            }
            _ => {
                atoms.push(coords);
                weights.push(w);
            }
        }
    }
    let k = atoms.len();
    let flat: Vec<f64> = atoms.into_iter().flatten().collect();
    DiscreteMeasure::new(
        Array2::from_shape_vec((k, d), flat).expect("k x d shape"),
        Array1::from_vec(weights),
    )
}

// ====== shadows ======

/// A coupling pushed onto new marginals, with transport and divergence
/// diagnostics relative to the original.
#[derive(Debug, Clone, PartialEq)]
pub struct ShadowResult {
    /// The pushed coupling.
    pub shadow: Coupling,
    /// `W_p` distance between the original and the shadow, both viewed as
    /// measures on the product space under the split cost
    /// `|x - x'|^p + |y - y'|^p`.
    pub wp_change: f64,
    /// Divergence of the original from the product of its marginals.
    pub divergence_before: f64,
    /// Divergence of the shadow from the product of its marginals;
    /// never exceeds `divergence_before` beyond roundoff.
    pub divergence_after: f64,
}

/// Pushes `pi` through the conditional kernels of `kappa1` and `kappa2`:
/// the shadow has weights `K1^T pi K2` and lives on the right marginals of
/// the kappas.
///
/// `kappa1` must couple the first marginal of `pi` to its new location,
/// `kappa2` the second. When the kappas are `W_p`-optimal the shadow moves
/// by exactly the quantization distances; for arbitrary kappas only the
/// divergence contraction is guaranteed, and both diagnostics are reported
/// as observed.
pub fn shadow(
    pi: &Coupling,
    kappa1: &Coupling,
    kappa2: &Coupling,
    p: f64,
    q: QParam,
) -> Result<ShadowResult> {
    require_same_marginal(pi.left(), kappa1.left(), "first")?;
    require_same_marginal(pi.right(), kappa2.left(), "second")?;
    let (_, k1) = kappa1.disintegrate();
    let (_, k2) = kappa2.disintegrate();
    let pushed = k1.rows().t().dot(pi.weights()).dot(k2.rows());
    let shadow = Coupling::new(pushed, kappa1.right().clone(), kappa2.right().clone())?;
    let wp_change = wasserstein_p_couplings(pi, &shadow, p)?;
    let divergence_before = tsallis_divergence_vs_product(pi, q)?;
    let divergence_after = tsallis_divergence_vs_product(&shadow, q)?;
    Ok(ShadowResult {
        shadow,
        wp_change,
        divergence_before,
        divergence_after,
    })
}

fn require_same_marginal(of_pi: &DiscreteMeasure, of_kappa: &DiscreteMeasure, side: &str) -> Result<()> {
    let atoms_match = of_pi.len() == of_kappa.len()
        && of_pi.dim() == of_kappa.dim()
        && of_pi
            .atoms()
            .iter()
            .zip(of_kappa.atoms().iter())
            .all(|(x, y)| x == y);
    let weights_match = of_pi.len() == of_kappa.len()
        && of_pi
            .weights()
            .iter()
            .zip(of_kappa.weights().iter())
            .all(|(x, y)| (x - y).abs() <= MARGINAL_TOL);
    if !atoms_match || !weights_match {
        return Err(OtError::usage(format!(
            "kernel coupling does not start from the {side} marginal of the coupling"
        )));
    }
    Ok(())
}

/// Carries `pi_star` to the quantized second marginal and back: the
/// intermediate stage shadows through the `W_p`-optimal coupling from the
/// second marginal to `mu2_quant`, the final stage shadows through its
/// reverse. The first marginal rides along an identity coupling in both
/// stages.
pub fn double_shadow(
    pi_star: &Coupling,
    mu2_quant: &DiscreteMeasure,
    p: f64,
    q: QParam,
) -> Result<(ShadowResult, ShadowResult)> {
    let cost = build_cost(pi_star.right(), mu2_quant, CostFamily::LpPower(p))?;
    let kappa2 = solve_exact(&cost, pi_star.right(), mu2_quant)?.coupling;
    let kappa1 = Coupling::identity(pi_star.left());
    let intermediate = shadow(pi_star, &kappa1, &kappa2, p, q)?;
    let back = kappa2.transpose();
    let final_stage = shadow(&intermediate.shadow, &kappa1, &back, p, q)?;
    Ok((intermediate, final_stage))
}

/// Evaluates both sides of the divergence contraction under a common
/// kernel: returns `(D_q(mu K, nu K), D_q(mu, nu))`. The first never
/// exceeds the second beyond roundoff.
pub fn data_processing_check(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    k: &StochasticKernel,
    q: QParam,
) -> Result<(f64, f64)> {
    if mu.len() != nu.len() {
        return Err(OtError::usage(format!(
            "divergence needs commonly indexed measures, got {} and {} atoms",
            mu.len(),
            nu.len()
        )));
    }
    let mu_w = mu.weights().as_slice().expect("contiguous");
    let nu_w = nu.weights().as_slice().expect("contiguous");
    let pushed_mu = push_weights(mu_w, k)?;
    let pushed_nu = push_weights(nu_w, k)?;
    let lhs = tsallis_divergence_weights(q, &pushed_mu, &pushed_nu)?;
    let rhs = tsallis_divergence_weights(q, mu_w, nu_w)?;
    Ok((lhs, rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{random_coupling, random_kernel, random_measure};
    use crate::measures::{product_measure, push_kernel};
    use crate::qcalc::phi_q;
    use ndarray::array;

    fn q(v: f64) -> QParam {
        QParam::new(v).expect("valid order")
    }

    fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn quantize_returns_the_measure_when_the_budget_covers_it() {
        let mu = DiscreteMeasure::new(array![[0.0], [0.4], [1.0]], array![0.2, 0.3, 0.5])
            .expect("measure");
        for n in [3, 5] {
            let r = quantize(&mu, n, 1.0).expect("quantize");
            assert_eq!(r.quantized, mu);
            assert_eq!(r.achieved_wp, 0.0);
        }
        assert!(quantize(&mu, 0, 1.0).is_err());
        assert!(quantize(&mu, 2, 0.5).is_err());
    }

    #[test]
    fn grid_quantizer_achieves_the_midpoint_law() {
        let grid = DiscreteMeasure::unit_grid_1d(1024).expect("grid");
        let r2 = quantize(&grid, 2, 1.0).expect("quantize");
        assert_eq!(r2.quantized.len(), 2);
        assert!((r2.achieved_wp - 0.125).abs() < 1e-12, "{}", r2.achieved_wp);
        assert!((r2.quantized.atoms()[(0, 0)] - 0.25).abs() < 1e-3);
        assert!((r2.quantized.atoms()[(1, 0)] - 0.75).abs() < 1e-3);
        let r4 = quantize(&grid, 4, 1.0).expect("quantize");
        assert!((r4.achieved_wp - 0.0625).abs() < 1e-12, "{}", r4.achieved_wp);
    }

    #[test]
    fn quantizer_error_scales_inversely_with_the_budget() {
        let grid = DiscreteMeasure::unit_grid_1d(1024).expect("grid");
        for n in [2usize, 4, 8, 16] {
            let r = quantize(&grid, n, 1.0).expect("quantize");
            let scaled = r.achieved_wp * n as f64;
            assert!((scaled - 0.25).abs() <= 0.05 * 0.25, "n={n}: {scaled}");
        }
    }

    #[test]
    fn mean_representatives_for_square_cost_are_exact() {
        let grid = DiscreteMeasure::unit_grid_1d(1024).expect("grid");
        let r = quantize(&grid, 2, 2.0).expect("quantize");
        assert!((r.quantized.atoms()[(0, 0)] - 0.25).abs() < 1e-12);
        assert!((r.quantized.atoms()[(1, 0)] - 0.75).abs() < 1e-12);
        assert!((r.quantized.weight(0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn intermediate_orders_use_the_line_search_representative() {
        let grid = DiscreteMeasure::unit_grid_1d(256).expect("grid");
        let r = quantize(&grid, 2, 3.0).expect("quantize");
        // For a symmetric cell every `p` shares the central minimizer.
        assert!((r.quantized.atoms()[(0, 0)] - 0.25).abs() < 1e-6);
        assert!((r.quantized.atoms()[(1, 0)] - 0.75).abs() < 1e-6);
    }

    #[test]
    fn heavy_atoms_split_across_cells_and_merge_back() {
        // One atom holds 3/4 of the mass; with n = 2 both cells sit on it.
        let mu = DiscreteMeasure::new(array![[0.0], [1.0]], array![0.75, 0.25])
            .expect("measure");
        let r = quantize(&mu, 2, 1.0).expect("quantize");
        assert_eq!(r.quantized.len(), 2);
        assert_eq!(r.quantized.atoms()[(0, 0)], 0.0);
        assert_eq!(r.quantized.atoms()[(1, 0)], 1.0);
        assert!((r.quantized.weight(0) - 0.75).abs() < 1e-12);
        assert_eq!(r.achieved_wp, 0.0);

        // With a budget of one the cells share a median and collapse.
        let r1 = quantize(&mu, 1, 1.0).expect("quantize");
        assert_eq!(r1.quantized.len(), 1);
        assert_eq!(r1.quantized.atoms()[(0, 0)], 0.0);
        assert!((r1.achieved_wp - 0.25).abs() < 1e-12);
    }

    #[test]
    fn lloyd_recovers_separated_clusters() {
        let atoms = array![
            [0.0, 0.0],
            [0.1, 0.0],
            [0.0, 0.1],
            [5.0, 5.0],
            [5.1, 5.0],
            [5.0, 5.1]
        ];
        let weights = Array1::from_elem(6, 1.0 / 6.0);
        let mu = DiscreteMeasure::new(atoms, weights).expect("measure");
        let r = quantize(&mu, 2, 2.0).expect("quantize");
        assert_eq!(r.quantized.len(), 2);
        let third = 0.1 / 3.0;
        assert!((r.quantized.atoms()[(0, 0)] - third).abs() < 1e-12);
        assert!((r.quantized.atoms()[(0, 1)] - third).abs() < 1e-12);
        assert!((r.quantized.atoms()[(1, 0)] - (5.0 + third)).abs() < 1e-12);
        assert!((r.quantized.weight(0) - 0.5).abs() < 1e-12);
        assert!(r.achieved_wp > 0.0 && r.achieved_wp < 0.2);

        let again = quantize(&mu, 2, 2.0).expect("quantize");
        assert_eq!(r.quantized, again.quantized);
    }

    #[test]
    fn shadow_through_identity_kernels_is_exact() {
        let mut rng = seeded_rng(7);
        let mu = random_measure(&mut rng, 4, 1);
        let nu = random_measure(&mut rng, 3, 1);
        let pi = random_coupling(&mut rng, &mu, &nu, 25);
        let k1 = Coupling::identity(&mu);
        let k2 = Coupling::identity(&nu);
        let s = shadow(&pi, &k1, &k2, 2.0, q(2.0)).expect("shadow");
        assert_eq!(max_abs_diff(s.shadow.weights(), pi.weights()), 0.0);
        assert!(s.wp_change.abs() <= 1e-9);
        assert!((s.divergence_after - s.divergence_before).abs() <= 1e-12);
    }

    #[test]
    fn shadow_rejects_foreign_kernel_couplings() {
        let mut rng = seeded_rng(8);
        let mu = random_measure(&mut rng, 4, 1);
        let nu = random_measure(&mut rng, 3, 1);
        let pi = random_coupling(&mut rng, &mu, &nu, 10);
        let wrong = Coupling::identity(&nu);
        let err = shadow(&pi, &wrong, &wrong, 2.0, q(2.0)).unwrap_err();
        assert!(err.to_string().contains("first marginal"));
    }

    #[test]
    fn shadow_of_a_product_stays_a_product() {
        let mut rng = seeded_rng(9);
        let mu = random_measure(&mut rng, 3, 1);
        let nu = random_measure(&mut rng, 3, 1);
        let pi = product_measure(&mu, &nu);

        let k1 = random_kernel(&mut rng, 3, 2);
        let t1 = push_kernel(&mu, &k1, array![[0.2], [0.9]]).expect("push");
        let kappa1 = Coupling::recompose(&mu, &k1, &t1).expect("recompose");
        let k2 = random_kernel(&mut rng, 3, 2);
        let t2 = push_kernel(&nu, &k2, array![[0.1], [0.6]]).expect("push");
        let kappa2 = Coupling::recompose(&nu, &k2, &t2).expect("recompose");

        let s = shadow(&pi, &kappa1, &kappa2, 2.0, q(1.5)).expect("shadow");
        let expected = product_measure(&t1, &t2);
        assert!(max_abs_diff(s.shadow.weights(), expected.weights()) < 1e-12);
        assert!(s.divergence_before.abs() < 1e-12);
        assert!(s.divergence_after.abs() < 1e-12);
    }

    #[test]
    fn collapsing_one_side_yields_the_product_with_a_point() {
        let mu = DiscreteMeasure::new(array![[0.0], [1.0]], array![0.5, 0.5])
            .expect("measure");
        let pi = Coupling::identity(&mu);
        let kappa1 = Coupling::identity(&mu);
        let point = DiscreteMeasure::dirac(&[0.5]).expect("point");
        let kappa2 = Coupling::new(array![[0.5], [0.5]], mu.clone(), point)
            .expect("collapse coupling");
        let s = shadow(&pi, &kappa1, &kappa2, 1.0, q(2.0)).expect("shadow");
        assert_eq!(s.shadow.weights(), &array![[0.5], [0.5]]);
        assert!((s.divergence_before - 1.0).abs() < 1e-12);
        assert!(s.divergence_after.abs() < 1e-15);
    }

    #[test]
    fn double_shadow_with_a_full_quantization_is_the_identity() {
        let mut rng = seeded_rng(10);
        let mu1 = random_measure(&mut rng, 4, 1);
        let mu2 = random_measure(&mut rng, 5, 1);
        let cost = build_cost(&mu1, &mu2, CostFamily::LpPower(2.0)).expect("cost");
        let pi_star = solve_exact(&cost, &mu1, &mu2).expect("exact").coupling;
        let (inter, fin) = double_shadow(&pi_star, &mu2, 2.0, q(1.5)).expect("double shadow");
        assert!(max_abs_diff(inter.shadow.weights(), pi_star.weights()) <= 1e-12);
        assert!(max_abs_diff(fin.shadow.weights(), pi_star.weights()) <= 1e-12);
        assert!(inter.wp_change <= 1e-9);
        assert!(fin.wp_change <= 1e-9);
    }

    #[test]
    fn double_shadow_obeys_the_divergence_and_distance_bounds() {
        let mut rng = seeded_rng(11);
        let mu1 = random_measure(&mut rng, 5, 1);
        let mu2 = random_measure(&mut rng, 6, 1);
        let cost = build_cost(&mu1, &mu2, CostFamily::LpPower(2.0)).expect("cost");
        let pi_star = solve_exact(&cost, &mu1, &mu2).expect("exact").coupling;
        let quant = quantize(&mu2, 3, 2.0).expect("quantize");

        let (inter, fin) =
            double_shadow(&pi_star, &quant.quantized, 2.0, q(2.0)).expect("double shadow");

        // A coupling with a 3-atom second marginal cannot diverge from the
        // product by more than phi_q(3).
        let bound = phi_q(q(2.0), 3.0).expect("phi");
        assert!(inter.divergence_after <= bound + 1e-9);
        assert!((phi_q(q(2.0), 4.0).expect("phi") - 3.0).abs() < 1e-12);

        let w_quant = wasserstein_p(&mu2, &quant.quantized, 2.0).expect("wp");
        let w_round_trip =
            wasserstein_p_couplings(&fin.shadow, &pi_star, 2.0).expect("coupling wp");
        assert!(
            w_round_trip <= 2.0 * w_quant + 1e-9,
            "{w_round_trip} vs {w_quant}"
        );

        assert!(inter.divergence_after <= inter.divergence_before + 1e-9);
        assert!(fin.divergence_after <= fin.divergence_before + 1e-9);
    }

    #[test]
    fn data_processing_identity_and_collapse_cases() {
        let mut rng = seeded_rng(12);
        let mu = random_measure(&mut rng, 4, 1);
        let other = random_measure(&mut rng, 4, 1);
        let nu = DiscreteMeasure::new(mu.atoms().clone(), other.weights().clone())
            .expect("shared atoms");

        let identity = StochasticKernel::new(Array2::eye(4)).expect("kernel");
        let (lhs, rhs) = data_processing_check(&mu, &nu, &identity, q(2.0)).expect("check");
        assert_eq!(lhs, rhs);

        let mut rows = Array2::zeros((4, 2));
        for i in 0..4 {
            rows[(i, 0)] = 0.3;
            rows[(i, 1)] = 0.7;
        }
        let collapse = StochasticKernel::new(rows).expect("kernel");
        let (lhs, rhs) = data_processing_check(&mu, &nu, &collapse, q(2.0)).expect("check");
        assert!(lhs.abs() < 1e-12);
        assert!(rhs >= 0.0);
    }

    #[test]
    fn data_processing_never_amplifies_divergence() {
        let orders = [1.0, 1.7, 2.0];
        for seed in 0..50u64 {
            let mut rng = seeded_rng(1000 + seed);
            let mu = random_measure(&mut rng, 4, 1);
            let other = random_measure(&mut rng, 4, 1);
            let nu = DiscreteMeasure::new(mu.atoms().clone(), other.weights().clone())
                .expect("shared atoms");
            let kernel = random_kernel(&mut rng, 4, 3);
            for &ord in &orders {
                let (lhs, rhs) =
                    data_processing_check(&mu, &nu, &kernel, q(ord)).expect("check");
                assert!(lhs <= rhs + 1e-9, "q={ord} seed={seed}: {lhs} > {rhs}");
            }

            // Direct summation cross-check at q = 2.
            let (lhs, rhs) = data_processing_check(&mu, &nu, &kernel, q(2.0)).expect("check");
            let direct = |pw: &[f64], rw: &[f64]| -> f64 {
                pw.iter()
                    .zip(rw.iter())
                    .map(|(&a, &b)| if b == 0.0 { 0.0 } else { a * a / b - a })
                    .sum()
            };
            let mu_w = mu.weights().as_slice().expect("contiguous");
            let nu_w = nu.weights().as_slice().expect("contiguous");
            let pm = push_weights(mu_w, &kernel).expect("push");
            let pn = push_weights(nu_w, &kernel).expect("push");
            assert!((direct(&pm, &pn) - lhs).abs() < 1e-12);
            assert!((direct(mu_w, nu_w) - rhs).abs() < 1e-12);
        }
    }
}
