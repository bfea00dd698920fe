//! Error taxonomy shared by every module in this crate.
//!
//! Three failure classes cover everything the library can reject:
//!
//! | Variant      | Meaning                                                        |
//! |--------------|----------------------------------------------------------------|
//! | `Domain`     | a scalar argument left the mathematical domain of a formula    |
//! | `Usage`      | inputs are structurally inconsistent (shapes, invariants, ...) |
//! | `Numerical`  | an algorithm could not certify its result at the required tolerance |
//!
//! Non-convergence of an iterative solver is *not* an error: solvers return a
//! report with `converged = false` so callers can inspect partial output.

use thiserror::Error;

/// Errors produced by construction, validation, and solving.
#[derive(Debug, Clone, Error)]
pub enum OtError {
    /// A scalar argument is outside the domain of the requested formula,
    /// e.g. a non-positive argument to a deformed logarithm.
    #[error("domain error: {0}")]
    Domain(String),

    /// Structurally inconsistent inputs: mismatched shapes, invalid weights,
    /// unsupported parameter combinations.
    #[error("usage error: {0}")]
    Usage(String),

    /// A numerical procedure failed to certify its result (lost bracket,
    /// singular system, unverifiable optimality). The message carries the
    /// offending residuals.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, OtError>;

impl OtError {
    /// Shorthand used by validation paths.
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        OtError::Usage(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        OtError::Domain(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        OtError::Numerical(msg.into())
    }
}
