//! Tsallis-entropic regularized optimal transport on discrete measures.
//!
//! The two central objects are couplings of discrete probability measures
//! and the Tsallis divergence of order `q >= 1`, which interpolates between
//! the Kullback-Leibler divergence (`q = 1`) and heavier-tailed penalties
//! that vanish on a growing region as `q` grows. Regularizing the transport
//! cost with this divergence, relative to the product of the marginals,
//! yields an objective whose minimizers have sparse support for `q > 1`, in
//! contrast to the strictly positive plans of entropic (KL) regularization.
//!
//! Module map:
//!
//! * [`measures`]: discrete measures, couplings, kernels, cost matrices,
//!   and their validation and serialization.
//! * [`qcalc`]: deformed logarithms and exponentials, the generator
//!   `f_q`, its Legendre conjugate, and the Tsallis divergence.
//! * [`exact_ot`]: unregularized transport (exact LP solvers and
//!   Wasserstein distances) used as references and certificates.
//! * [`solver`]: the regularized problem itself, solved by blockwise dual
//!   ascent, with an independent primal interior-point route and a
//!   classical KL baseline for cross-checks.
//! * [`approx`]: quantization of measures and shadow couplings, the
//!   constructive approximation tools behind the convergence rates.
//! * [`rates`]: closed-form convergence-rate envelopes and empirical
//!   rate sweeps.
//! * [`instances`]: seeded random instances for tests and experiments.

pub mod approx;
pub mod error;
pub mod exact_ot;
pub mod instances;
pub mod measures;
pub mod qcalc;
pub mod rates;
pub mod solver;

pub use error::{OtError, Result};
pub use measures::{
    build_cost, check_coupling, check_kernel, check_measure, product_measure, push_kernel,
    push_weights, CostFamily, CostMatrix, Coupling, Diagnostics, DiscreteMeasure,
    StochasticKernel, MARGINAL_TOL, MASS_TOL,
};
pub use qcalc::{
    f_q, f_q_prime, f_q_star, f_q_star_prime, f_q_star_second, phi_q, q_exp, q_log,
    tsallis_divergence, tsallis_divergence_vs_product, tsallis_divergence_weights, QParam,
};
pub use approx::{
    data_processing_check, double_shadow, quantize, quantize_with_seed, shadow,
    QuantizationResult, ShadowResult,
};
pub use exact_ot::{
    coupling_as_measure, solve_exact, wasserstein_p, wasserstein_p_couplings, ExactMethod,
    ExactSolution,
};
pub use rates::{
    constants_sharpness, constants_upper, kl_envelope, rate_sweep, records_to_csv,
    sharpness_envelope, slope_fit, summarize_sweep, upper_envelope, RateParams, RateRecord,
    SweepSummary, UpperEnvelope,
};
pub use solver::{
    round_to_marginals, sinkhorn_kl, solve_dual, solve_primal, DualPotentials, SolveConfig,
    SolveReport,
};
