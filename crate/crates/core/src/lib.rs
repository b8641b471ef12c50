//! Numerical toolkit for the Brown measure of `u·b_{s,τ}`, where `u` is a
//! unitary with law μ₀ on the unit circle and `b_{s,τ}` is a free
//! multiplicative Brownian motion with variance `s` and covariance `τ`.
//!
//! The crate computes the domains Σ_{s,τ}, the density of the Brown measure,
//! the regularized log potential S through Hamilton–Jacobi characteristics,
//! the push-forward maps between different values of τ and the ∗-moment
//! hierarchy of `b_{s,τ}`. A finite-N random-matrix laboratory provides
//! Monte-Carlo cross-checks for all of them.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod brown_measure;
pub mod circle_measure;
pub mod error;
pub mod hj_engine;
pub mod moment_engine;
pub mod pushforward_map;
pub mod quadrature;
pub mod rmt_lab;
pub mod spectral_domain;

pub use circle_measure::{BrownParams, CircleMeasure};
pub use error::{Error, Result};
