//! Deformed (q-)calculus: the scalar kernel underneath Tsallis-regularized
//! transport.
//!
//! Everything in this module is a pure function of `f64` scalars. The rest of
//! the crate builds on five primitives:
//!
//! | Function          | Formula (order q != 1)                       | Limit at q = 1 |
//! |-------------------|----------------------------------------------|----------------|
//! | [`q_log`]         | `(y^(1-q) - 1) / (1 - q)`                    | `ln y`         |
//! | [`q_exp`]         | `[1 + (1-q) y]_+^(1/(1-q))`                  | `exp y`        |
//! | [`f_q`]           | `(x^q - x) / (q - 1)`                        | `x ln x`       |
//! | [`phi_q`]         | `(x^(q-1) - 1) / (q - 1)` = `f_q(x) / x`     | `ln x`         |
//! | [`f_q_star`]      | `q^(-q/(q-1)) [1 + (q-1) y]_+^(q/(q-1))`     | `exp(y - 1)`   |
//!
//! `f_q` is the convex generator of the Tsallis divergence
//! `D_q(mu, nu) = sum_i nu_i f_q(mu_i / nu_i)` ([`tsallis_divergence`]), and
//! `f_q_star` is its Legendre conjugate restricted to `x >= 0`, which is what
//! the dual solver evaluates. `[z]_+` denotes `max(z, 0)`.
//!
//! # Numerical strategy
//!
//! Every formula above suffers catastrophic cancellation near `q = 1` if
//! evaluated literally: `x^(q-1) - 1` loses all significant digits when
//! `(q-1) ln x` is tiny. All implementations therefore route through
//! `exp_m1` / `ln_1p`, e.g.
//!
//! ```text
//! q_log(q, y) = ln(y) * exp_m1(t) / t,   t = (1 - q) ln y,
//! ```
//!
//! which is uniformly accurate in `q` (the `t -> 0` limit is taken exactly),
//! so there is no accuracy cliff anywhere in `q >= 1`, including
//! `|q - 1| ~ 1e-12`.
//!
//! # Extended reals
//!
//! `+inf` is a legitimate return value, not an error: `q_exp` walks off to
//! `+inf` on the boundary of its support for `q > 1` (`0^(1/(1-q))` with a
//! negative exponent), and the divergence of a measure that is not absolutely
//! continuous with respect to the reference is `+inf`. Errors are reserved
//! for arguments outside a function's domain.

use crate::error::{OtError, Result};
use crate::measures::{Coupling, DiscreteMeasure};

/// Validated entropic index. Every divergence-bearing operation in the crate
/// takes its order through this type, which enforces `q >= 1` once so the
/// formulas never have to re-check.
///
/// `q = 1` selects the Kullback-Leibler limit everywhere. Orders `q > 2` are
/// computable but lie outside the concavity range `1 < q <= 2` that the rate
/// envelopes assume; reports expose [`QParam::beyond_concavity`] so callers
/// can flag such runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QParam(f64);

impl QParam {
    /// Accepts any finite `q >= 1`.
    pub fn new(q: f64) -> Result<Self> {
        if q.is_finite() && q >= 1.0 {
            Ok(QParam(q))
        } else {
            Err(OtError::usage(format!(
                "entropic index must be finite and >= 1, got {q}"
            )))
        }
    }

    /// The raw order.
    pub fn get(self) -> f64 {
        self.0
    }

    /// True exactly at the Kullback-Leibler order `q = 1`.
    pub fn is_kl(self) -> bool {
        self.0 == 1.0
    }

    /// True when `q > 2`, i.e. outside the range where `phi_q` is concave
    /// and the rate envelopes are guaranteed.
    pub fn beyond_concavity(self) -> bool {
        self.0 > 2.0
    }
}

impl std::fmt::Display for QParam {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

// ====== deformed logarithm and exponential ======

/// Deformed logarithm `log_q(y) = (y^(1-q) - 1) / (1 - q)`, with `ln y` at
/// `q = 1`. Accepts any real `order` (the crate itself uses orders `2 - q`
/// and `1/((q-1)beta + 1)`, both of which drop below 1).
///
/// # Errors
///
/// `Domain` if `y <= 0` or `y` is NaN.
///
/// # Example
///
/// ```
/// use tsallis_ot::qcalc::q_log;
/// assert!((q_log(2.0, 2.0).unwrap() - 0.5).abs() < 1e-12); // 1 - 1/y
/// assert!((q_log(1.0, std::f64::consts::E).unwrap() - 1.0).abs() < 1e-12);
/// ```
pub fn q_log(order: f64, y: f64) -> Result<f64> {
    if !(y > 0.0) {
        return Err(OtError::domain(format!(
            "q_log requires y > 0, got {y}"
        )));
    }
    let ly = y.ln();
    let t = (1.0 - order) * ly;
    if t == 0.0 {
        Ok(ly)
    } else {
        Ok(ly * t.exp_m1() / t)
    }
}

/// Deformed exponential `exp_q(y) = [1 + (1-q) y]_+^(1/(1-q))`, with `exp y`
/// at `q = 1`. Total on the reals: outside the support boundary it returns
/// `0` for `order < 1` and `+inf` for `order > 1` (the convention
/// `0^(1/(1-q)) = +inf` for negative exponents).
///
/// Inverse of [`q_log`] wherever the latter is defined.
pub fn q_exp(order: f64, y: f64) -> f64 {
    if y.is_nan() {
        return f64::NAN;
    }
    if order == 1.0 {
        return y.exp();
    }
    let u = (1.0 - order) * y;
    let a = 1.0 + u;
    if a > 0.0 {
        (u.ln_1p() / (1.0 - order)).exp()
    } else if order > 1.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

// ====== divergence generator and conjugate ======

/// Convex generator `f_q(x) = (x^q - x) / (q - 1)` on `x >= 0`, with
/// `x ln x` at `q = 1` and `f_q(0) = 0`.
///
/// Strictly convex, `f_q(1) = 0`, and nonnegative at the barycenter, which is
/// what makes `D_q` a divergence.
///
/// # Errors
///
/// `Domain` if `x < 0` or NaN.
pub fn f_q(q: QParam, x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(OtError::domain(format!(
            "f_q requires x >= 0, got {x}"
        )));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if q.get() == 2.0 {
        return Ok(x * x - x);
    }
    let lx = x.ln();
    let s = (q.get() - 1.0) * lx;
    if s == 0.0 {
        Ok(x * lx)
    } else {
        Ok(x * lx * s.exp_m1() / s)
    }
}

/// Derivative of the generator, `f_q'(x) = (q x^(q-1) - 1) / (q - 1)`, with
/// `ln x + 1` at `q = 1`.
///
/// Strictly increasing on `(0, inf)`. At `x = 0` the one-sided limit is
/// `-1/(q-1)` for `q > 1` and `-inf` at `q = 1`.
///
/// # Errors
///
/// `Domain` if `x < 0` or NaN.
pub fn f_q_prime(q: QParam, x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(OtError::domain(format!(
            "f_q_prime requires x >= 0, got {x}"
        )));
    }
    if q.get() == 2.0 {
        return Ok(2.0 * x - 1.0);
    }
    if x == 0.0 {
        return Ok(if q.is_kl() {
            f64::NEG_INFINITY
        } else {
            -1.0 / (q.get() - 1.0)
        });
    }
    // (q x^(q-1) - 1)/(q-1) = q ln(x) expm1(s)/s + 1 with s = (q-1) ln x.
    let lx = x.ln();
    let s = (q.get() - 1.0) * lx;
    let core = if s == 0.0 { lx } else { lx * s.exp_m1() / s };
    Ok(q.get() * core + 1.0)
}

/// Density form `phi_q(x) = f_q(x) / x = (x^(q-1) - 1) / (q - 1)`, with
/// `ln x` at `q = 1`.
///
/// Nondecreasing on `(0, inf)`; concave for `1 < q <= 2`. Also equals
/// `log_{2-q}(x)`, the deformed logarithm at the conjugate order.
///
/// # Errors
///
/// `Domain` if `x < 0`, if `x` is NaN, or if `x = 0` at `q = 1` (where the
/// limit is `-inf`). At `x = 0` with `q > 1` the finite value `-1/(q-1)` is
/// returned.
pub fn phi_q(q: QParam, x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(OtError::domain(format!(
            "phi_q requires x >= 0, got {x}"
        )));
    }
    if x == 0.0 {
        return if q.is_kl() {
            Err(OtError::domain("phi_q(1, 0) is -inf".to_string()))
        } else {
            Ok(-1.0 / (q.get() - 1.0))
        };
    }
    let lx = x.ln();
    let s = (q.get() - 1.0) * lx;
    if s == 0.0 {
        Ok(lx)
    } else {
        Ok(lx * s.exp_m1() / s)
    }
}

/// Legendre conjugate of `f_q` over `x >= 0`:
///
/// ```text
/// f_q*(y) = q^(-q/(q-1)) [1 + (q-1) y]_+^(q/(q-1))   (q > 1)
///         = exp(y - 1)                                (q = 1)
/// ```
///
/// Convex, nondecreasing, identically zero on `y <= -1/(q-1)` for `q > 1`.
/// Evaluated in log space so the `q -> 1` regime is seamless.
///
/// # Example
///
/// ```
/// use tsallis_ot::qcalc::{f_q_star, QParam};
/// let q2 = QParam::new(2.0).unwrap();
/// assert!((f_q_star(q2, 1.0) - 1.0).abs() < 1e-12); // (1/4)(1+y)^2 at y=1
/// assert_eq!(f_q_star(q2, -3.0), 0.0);
/// ```
pub fn f_q_star(q: QParam, y: f64) -> f64 {
    if y.is_nan() {
        return f64::NAN;
    }
    if q.is_kl() {
        return (y - 1.0).exp();
    }
    if q.get() == 2.0 {
        let z = 1.0 + y;
        return if z <= 0.0 { 0.0 } else { 0.25 * z * z };
    }
    let qm1 = q.get() - 1.0;
    let w = qm1 * y;
    if 1.0 + w <= 0.0 {
        return 0.0;
    }
    // q^(-q/(q-1)) A^(q/(q-1)) = exp( q * (ln1p(w) - ln1p(q-1)) / (q-1) )
    (q.get() * (w.ln_1p() - qm1.ln_1p()) / qm1).exp()
}

/// Derivative of [`f_q_star`]:
///
/// ```text
/// (f_q*)'(y) = [ (1 + (q-1) y) / q ]_+^(1/(q-1))   (q > 1)
///            = exp(y - 1)                           (q = 1)
/// ```
///
/// This is the maximizer `x*(y)` of `x y - f_q(x)`, hence the primal density
/// the dual solver reads off its potentials. Continuous and nondecreasing,
/// zero on `y <= -1/(q-1)`, and equal to 1 at `y = 1` for every `q`.
pub fn f_q_star_prime(q: QParam, y: f64) -> f64 {
    if y.is_nan() {
        return f64::NAN;
    }
    if q.is_kl() {
        return (y - 1.0).exp();
    }
    if q.get() == 2.0 {
        let z = 1.0 + y;
        return if z <= 0.0 { 0.0 } else { 0.5 * z };
    }
    let qm1 = q.get() - 1.0;
    let w = qm1 * y;
    if 1.0 + w <= 0.0 {
        return 0.0;
    }
    ((w.ln_1p() - qm1.ln_1p()) / qm1).exp()
}

/// Slope of [`f_q_star_prime`], used by safeguarded Newton steps:
/// `(1/q) [ (1 + (q-1) y) / q ]_+^((2-q)/(q-1))` for `q > 1`, `exp(y - 1)`
/// at `q = 1`. Zero on the inactive region. For `q > 2` it diverges as the
/// kink is approached from the right; callers must bracket.
pub fn f_q_star_second(q: QParam, y: f64) -> f64 {
    if y.is_nan() {
        return f64::NAN;
    }
    if q.is_kl() {
        return (y - 1.0).exp();
    }
    if q.get() == 2.0 {
        return if 1.0 + y <= 0.0 { 0.0 } else { 0.5 };
    }
    let qm1 = q.get() - 1.0;
    let w = qm1 * y;
    if 1.0 + w <= 0.0 {
        return 0.0;
    }
    ((2.0 - q.get()) * (w.ln_1p() - qm1.ln_1p()) / qm1).exp() / q.get()
}

// ====== Tsallis divergence ======

/// Tsallis divergence between weight vectors sharing one support enumeration:
/// `D_q(p, r) = sum_i r_i f_q(p_i / r_i)`, with the conventions
/// `0 * f_q(0/0) = 0` and `D_q = +inf` as soon as `p_i > 0` where `r_i = 0`.
///
/// At `q = 1` this is the Kullback-Leibler divergence; at `q = 2` it equals
/// `sum_i p_i^2 / r_i - 1` when both vectors have total mass one.
///
/// # Errors
///
/// `Usage` on length mismatch or negative entries. Weights are consumed as
/// given; normalization is the caller's contract.
pub fn tsallis_divergence_weights(q: QParam, p: &[f64], r: &[f64]) -> Result<f64> {
    if p.len() != r.len() {
        return Err(OtError::usage(format!(
            "divergence requires equal lengths, got {} and {}",
            p.len(),
            r.len()
        )));
    }
    let mut total = 0.0;
    for (i, (&pi, &ri)) in p.iter().zip(r.iter()).enumerate() {
        if !(pi >= 0.0) || !(ri >= 0.0) {
            return Err(OtError::usage(format!(
                "divergence requires nonnegative weights, got p[{i}] = {pi}, r[{i}] = {ri}"
            )));
        }
        if ri == 0.0 {
            if pi > 0.0 {
                return Ok(f64::INFINITY);
            }
            continue;
        }
        if pi == 0.0 {
            // r_i * f_q(0) = 0 for every q.
            continue;
        }
        total += ri * f_q(q, pi / ri)?;
    }
    Ok(total)
}

/// Tsallis divergence `D_q(mu, nu)` between two measures on the same atoms.
///
/// # Errors
///
/// `Usage` unless the measures have identical atom lists (same order, exact
/// coordinates): divergences are weight-wise and need a declared common
/// indexing.
///
/// # Example
///
/// ```
/// use ndarray::array;
/// use tsallis_ot::measures::DiscreteMeasure;
/// use tsallis_ot::qcalc::{tsallis_divergence, QParam};
/// let atoms = array![[0.0], [1.0]];
/// let mu = DiscreteMeasure::new(atoms.clone(), array![0.5, 0.5]).unwrap();
/// let nu = DiscreteMeasure::new(atoms, array![0.25, 0.75]).unwrap();
/// let d = tsallis_divergence(QParam::new(2.0).unwrap(), &mu, &nu).unwrap();
/// assert!((d - 1.0 / 3.0).abs() < 1e-12);
/// ```
pub fn tsallis_divergence(q: QParam, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
    if mu.atoms() != nu.atoms() {
        return Err(OtError::usage(
            "divergence of measures requires identical atom lists; \
             re-index both measures onto a common support first"
                .to_string(),
        ));
    }
    tsallis_divergence_weights(
        q,
        mu.weights().as_slice().expect("weights are contiguous"),
        nu.weights().as_slice().expect("weights are contiguous"),
    )
}

/// `D_q(pi, mu (x) nu)` for a coupling against the product of its own
/// marginals: the divergence term of the regularized transport objective.
/// `+inf` if the plan carries mass on a cell where the product vanishes.
pub fn tsallis_divergence_vs_product(pi: &Coupling, q: QParam) -> Result<f64> {
    let mut total = 0.0;
    for ((i, j), &w) in pi.weights().indexed_iter() {
        let reference = pi.left().weight(i) * pi.right().weight(j);
        if reference == 0.0 {
            if w > 0.0 {
                return Ok(f64::INFINITY);
            }
            continue;
        }
        total += reference * f_q(q, w / reference)?;
    }
    Ok(total)
}
