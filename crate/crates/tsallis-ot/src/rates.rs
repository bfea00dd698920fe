//! Convergence-rate envelopes and the empirical sweep harness.
//!
//! As the regularization strength shrinks, the regularized value descends
//! to the exact one at a rate governed by three closed forms: an upper
//! envelope built from a quantization argument, the classical KL envelope
//! it degenerates to at order one, and a lower (sharpness) envelope for
//! uniform marginals on a cube. `rate_sweep` measures the actual gap on an
//! instance over a grid of strengths, and `slope_fit` extracts the
//! empirical exponent for comparison with the predicted one.

use rayon::prelude::*;

use crate::error::{OtError, Result};
use crate::exact_ot::solve_exact;
use crate::measures::{CostMatrix, DiscreteMeasure};
use crate::qcalc::{phi_q, q_log, QParam};
use crate::solver::{solve_dual, SolveConfig};

/// Multiplicative slack applied to both envelopes when counting band
/// violations; constants are bounds, not tight prefactors.
pub const BAND_SLACK: f64 = 0.2;

/// Instance constants the envelopes are evaluated with.
///
/// `lipschitz` is the cost regularity constant and `quant_const` the
/// quantization constant: the instance must admit `n`-point approximations
/// of the second marginal with `W_p` error at most `quant_const *
/// n^{-1/beta}`, and transport costs must move by at most `lipschitz`
/// times that distance. `dim` enters only the sharpness envelope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateParams {
    pub q: QParam,
    pub beta: f64,
    pub lipschitz: f64,
    pub quant_const: f64,
    pub dim: usize,
}

impl RateParams {
    pub fn new(
        q: QParam,
        beta: f64,
        lipschitz: f64,
        quant_const: f64,
        dim: usize,
    ) -> Result<Self> {
        if !(beta >= 1.0) || !beta.is_finite() {
            return Err(OtError::usage(format!(
                "quantization exponent must be finite and >= 1, got {beta}"
            )));
        }
        if !(lipschitz >= 0.0) || !lipschitz.is_finite() {
            return Err(OtError::usage(format!(
                "cost regularity constant must be finite and >= 0, got {lipschitz}"
            )));
        }
        if !(quant_const >= 0.0) || !quant_const.is_finite() {
            return Err(OtError::usage(format!(
                "quantization constant must be finite and >= 0, got {quant_const}"
            )));
        }
        if dim == 0 {
            return Err(OtError::usage("dimension must be at least 1"));
        }
        Ok(RateParams {
            q,
            beta,
            lipschitz,
            quant_const,
            dim,
        })
    }

    /// Exponent denominator `(q - 1) beta + 1` shared by the upper
    /// envelope's constants and rate.
    fn order(&self) -> f64 {
        (self.q.get() - 1.0) * self.beta + 1.0
    }

    /// Whether the upper envelope is a proven bound at these parameters;
    /// the argument behind it needs `1 < q <= 2`.
    pub fn envelope_applies(&self) -> bool {
        !self.q.is_kl() && !self.q.beyond_concavity()
    }
}

/// One sweep point: the measured gap next to the three envelopes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateRecord {
    pub epsilon: f64,
    /// Regularized value minus the exact one; nonnegative up to solver
    /// tolerance.
    pub gap: f64,
    pub upper_env: f64,
    pub lower_env: f64,
    pub kl_env: f64,
    /// Duality gap certified by the solver at this point.
    pub solver_gap: f64,
    /// False when the solver failed to certify this point; flagged records
    /// carry NaN diagnostics and are skipped by fits and band counts.
    pub converged: bool,
}

/// Constants of the upper envelope.
///
/// With `r = (q - 1) beta + 1`: `K1 = (2LC/beta)^{(q-1)beta/r}` and
/// `K2 = (2LC)^{(q-1)beta/r} * beta^{1/r}`. As `q` descends to one, `K1`
/// tends to 1 and `K2` to `beta`.
pub fn constants_upper(params: &RateParams) -> Result<(f64, f64)> {
    if params.q.is_kl() {
        return Err(OtError::usage(
            "the upper envelope constants need q > 1; use kl_envelope at q = 1",
        ));
    }
    let r = params.order();
    let lc2 = 2.0 * params.lipschitz * params.quant_const;
    let exponent = (params.q.get() - 1.0) * params.beta / r;
    let k1 = (lc2 / params.beta).powf(exponent);
    let k2 = lc2.powf(exponent) * params.beta.powf(1.0 / r);
    Ok((k1, k2))
}

/// The upper envelope in both of its algebraically equivalent forms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpperEnvelope {
    /// `K1 (beta/r) eps log_{1/r}(1/eps) + ((K1 - 1)/(q - 1)) eps
    /// + K2 eps^{1/r}`: the budget trade-off minimized over a real-valued
    /// atom count.
    pub closed_form: f64,
    /// `min_n 2LC n^{-1/beta} + eps phi_q(n)` over integer `n >= 1`; the
    /// closed form can only undershoot it, never exceed it.
    pub integer_form: f64,
}

/// Evaluates the upper envelope at `eps`.
///
/// Both forms of the same trade-off are returned: the displayed closed
/// form and the integer-budget minimum it relaxes. The relaxation is exact
/// at the real minimizer, so `closed_form <= integer_form` up to roundoff,
/// with equality when the optimal budget is integral.
pub fn upper_envelope(eps: f64, params: &RateParams) -> Result<UpperEnvelope> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(OtError::usage(format!(
            "envelope needs a positive finite eps, got {eps}"
        )));
    }
    let (k1, k2) = constants_upper(params)?;
    let q = params.q.get();
    let r = params.order();
    let closed_form = k1 * (params.beta / r) * eps * q_log(1.0 / r, 1.0 / eps)?
        + (k1 - 1.0) / (q - 1.0) * eps
        + k2 * eps.powf(1.0 / r);

    let lc2 = 2.0 * params.lipschitz * params.quant_const;
    let budget_cost = |n: f64| -> f64 {
        lc2 * n.powf(-1.0 / params.beta) + eps * phi_q(params.q, n).expect("n >= 1 is valid")
    };
    // The trade-off is unimodal with real minimizer (2LC/(beta eps))^{beta/r},
    // so the integer minimum sits at a neighbor of it.
    let n_star = if lc2 == 0.0 {
        1.0
    } else {
        (lc2 / (params.beta * eps)).powf(params.beta / r)
    };
    let lo = n_star.floor().max(1.0);
    let hi = n_star.ceil().max(1.0);
    let integer_form = budget_cost(lo).min(budget_cost(hi));

    Ok(UpperEnvelope {
        closed_form,
        integer_form,
    })
}

/// The envelope the upper one degenerates to at `q = 1`:
/// `beta eps log(1/eps) + 4LC eps`.
pub fn kl_envelope(eps: f64, params: &RateParams) -> Result<f64> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(OtError::usage(format!(
            "envelope needs a positive finite eps, got {eps}"
        )));
    }
    let lc4 = 4.0 * params.lipschitz * params.quant_const;
    Ok(params.beta * eps * (1.0 / eps).ln() + lc4 * eps)
}

/// Constants of the sharpness (lower) envelope for uniform marginals on a
/// `dim`-cube.
pub fn constants_sharpness(params: &RateParams) -> Result<(f64, f64)> {
    if params.q.is_kl() {
        return Err(OtError::usage(
            "the sharpness envelope needs q > 1; the gap closes faster at q = 1",
        ));
    }
    let q = params.q.get();
    let s = (q - 1.0) * params.dim as f64 + 1.0;
    let two_pow = 2.0f64.powf(s / (q - 1.0));
    let inner = (q - 1.0) / ((s + q - 1.0) * two_pow) * (q / (q - 1.0)).powf(q / (q - 1.0));
    let k1 = s / (s + q - 1.0) * inner.powf((q - 1.0) / s);
    let k2 = (1.0 + two_pow) * q.powf(-q / (q - 1.0));
    Ok((k1, k2))
}

/// Lower envelope `K1~ eps^{1/((q-1)d+1)} - K2~ eps`; positive only for
/// small `eps`, where it certifies the gap cannot close faster than the
/// upper envelope's exponent.
pub fn sharpness_envelope(eps: f64, params: &RateParams) -> Result<f64> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(OtError::usage(format!(
            "envelope needs a positive finite eps, got {eps}"
        )));
    }
    let (k1, k2) = constants_sharpness(params)?;
    let s = (params.q.get() - 1.0) * params.dim as f64 + 1.0;
    Ok(k1 * eps.powf(1.0 / s) - k2 * eps)
}

/// Sweeps the regularization strength over `eps_grid` on one instance.
///
/// The exact value is solved once; each grid point then runs the dual
/// solver and records the measured gap next to the three envelopes (at
/// `q = 1` the upper envelope is the KL one and the lower is zero).
/// Points run concurrently and a failed point flags its record rather
/// than aborting the sweep. Results are ordered by the grid regardless
/// of scheduling.
pub fn rate_sweep(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cost: &CostMatrix,
    params: &RateParams,
    eps_grid: &[f64],
    cfg: &SolveConfig,
) -> Result<Vec<RateRecord>> {
    if eps_grid.is_empty() {
        return Err(OtError::usage("the sweep needs at least one eps"));
    }
    if eps_grid.iter().any(|&e| !(e > 0.0) || !e.is_finite()) {
        return Err(OtError::usage(
            "every eps in the sweep must be positive and finite",
        ));
    }
    if eps_grid.windows(2).any(|w| w[0] <= w[1]) {
        return Err(OtError::usage("the eps grid must be strictly decreasing"));
    }
    let exact = solve_exact(cost, mu, nu)?.value;

    eps_grid
        .par_iter()
        .map(|&eps| {
            let (upper_env, lower_env) = if params.q.is_kl() {
                (kl_envelope(eps, params)?, 0.0)
            } else {
                (
                    upper_envelope(eps, params)?.closed_form,
                    sharpness_envelope(eps, params)?,
                )
            };
            let mut record = RateRecord {
                epsilon: eps,
                gap: f64::NAN,
                upper_env,
                lower_env,
                kl_env: kl_envelope(eps, params)?,
                solver_gap: f64::NAN,
                converged: false,
            };
            let point_cfg = SolveConfig {
                epsilon: eps,
                q: params.q,
                ..*cfg
            };
            if let Ok(report) = solve_dual(cost, mu, nu, &point_cfg) {
                record.gap = report.primal_value - exact;
                record.solver_gap = report.gap;
                record.converged = report.converged;
            }
            Ok(record)
        })
        .collect()
}

/// Least-squares slope of `log(gap)` against `log(eps)` over the usable
/// records, with the fit's coefficient of determination.
pub fn slope_fit(records: &[RateRecord]) -> Result<(f64, f64)> {
    let pts: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.converged && r.gap.is_finite() && r.gap > 0.0)
        .map(|r| (r.epsilon.ln(), r.gap.ln()))
        .collect();
    if pts.len() < 4 {
        return Err(OtError::usage(format!(
            "slope fit needs at least 4 usable records, got {}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mean_x = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for &(x, y) in &pts {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
        syy += (y - mean_y) * (y - mean_y);
    }
    if sxx == 0.0 {
        return Err(OtError::usage(
            "slope fit needs at least two distinct eps values",
        ));
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        sxy * sxy / (sxx * syy)
    };
    Ok((slope, r2))
}

/// Fit and band diagnostics of a finished sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSummary {
    pub slope: f64,
    pub r2: f64,
    /// Converged records with `eps >= eps_floor` whose gap leaves
    /// `[lower * (1 - slack), upper * (1 + slack)]`.
    pub band_violations: usize,
    /// Records that entered the band count.
    pub banded_points: usize,
}

/// Fits the slope and counts band violations among records at or above
/// `eps_floor` (envelopes concern the continuum; below the discretization
/// floor the discrete gap leaves the modeled regime).
pub fn summarize_sweep(records: &[RateRecord], eps_floor: f64) -> Result<SweepSummary> {
    let (slope, r2) = slope_fit(records)?;
    let mut band_violations = 0;
    let mut banded_points = 0;
    for r in records {
        if !r.converged || r.epsilon < eps_floor {
            continue;
        }
        banded_points += 1;
        let lower = r.lower_env * (1.0 - BAND_SLACK);
        let upper = r.upper_env * (1.0 + BAND_SLACK);
        if r.gap < lower - 1e-12 || r.gap > upper + 1e-12 {
            band_violations += 1;
        }
    }
    Ok(SweepSummary {
        slope,
        r2,
        band_violations,
        banded_points,
    })
}

/// Serializes records as CSV with lossless 17-significant-digit numbers.
pub fn records_to_csv(records: &[RateRecord]) -> String {
    let mut out = String::from("epsilon,gap,upper_env,kl_env,lower_env,solver_gap,converged\n");
    for r in records {
        out.push_str(&format!(
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}\n",
            r.epsilon, r.gap, r.upper_env, r.kl_env, r.lower_env, r.solver_gap, r.converged
        ));
    }
    out
}
