//! Numerical toolkit for degenerate stochastic differential equations.
//!
//! The crate simulates SDEs of the form
//!
//! ```text
//! dX(t) = mu(X(t)) dt + sigma(X(t)) dW(t)
//! ```
//!
//! whose diffusion matrix loses rank on the boundary of the state domain
//! (square-root diffusions on the positive orthant, mean-reverting diffusions
//! in the unit ball), and provides the diagnostic machinery that goes with
//! them:
//!
//! * [`model`] — SDE definitions: built-in square-root / power / unit-ball
//!   models plus user-defined coefficient expressions.
//! * [`expr`] — the small arithmetic expression language used for custom
//!   coefficients.
//! * [`modulus`] — smoothed absolute-value ladders built from a modulus of
//!   continuity, used to audit Hölder-type conditions.
//! * [`conditions`] — sampled numerical audits of the drift/diffusion
//!   assumptions and the radial envelopes they require.
//! * [`paths`] — Brownian path generation with dyadic bridge refinement,
//!   positivity-robust integration schemes, and a reproducible parallel
//!   Monte Carlo driver.
//! * [`comparison`] — the coupling construction: time change, noise
//!   reconstruction, dominating one-dimensional process, ordering audit.
//! * [`boundary`] — one-dimensional scale densities and divergence-based
//!   boundary classification.
//!
//! All randomness is counter-based and keyed by explicit integers, so every
//! result is bit-reproducible regardless of thread count.

// numerical kernels walk several arrays in lockstep; indexed loops are the
// clearest form for them
#![allow(clippy::needless_range_loop)]

pub mod boundary;
pub mod comparison;
pub mod conditions;
pub mod expr;
pub mod model;
pub mod modulus;
pub mod paths;
pub mod quad;
