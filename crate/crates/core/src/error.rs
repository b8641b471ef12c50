//! Error type shared by every module of the crate.

use num_complex::Complex64;
use thiserror::Error;

/// Failures reported by the numerical routines.
///
/// Variants fall in two groups. Validation failures ([`Error::is_validation`])
/// mean the caller supplied inconsistent input. All other variants are
/// numerical failures raised while an algorithm was running.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// The measure description is malformed (negative weight, zero mass, duplicate angle).
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    /// The pair (s, τ) violates s > 0, τ ≠ 0, |τ − s| ≤ s.
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    /// Some other argument is outside its documented range.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// The evaluation point coincides with a support point of the measure.
    #[error("evaluation point {0} coincides with the support of the measure")]
    SingularPoint(Complex64),
    /// The θ-grid cannot resolve a monotone δ-profile.
    #[error("grid of {n} nodes is too coarse: δ is not monotone after refinement")]
    GridTooCoarse { n: usize },
    /// An iterative method exhausted its budget.
    #[error("{method} did not converge after {iterations} iterations")]
    NoConvergence { method: &'static str, iterations: usize },
    /// A continuation path left the region where the requested inverse is defined.
    #[error("continuation left the admissible region near {0}")]
    OutOfRegion(Complex64),
    /// Initial momenta are undefined at ε₀ = 0 on the support of μ_s.
    #[error("initial point {0} lies on the support of μ_s with ε₀ = 0")]
    SingularInitialPoint(Complex64),
    /// Newton shooting failed from every multistart seed.
    #[error("shooting for (λ, ε) = ({lambda}, {eps}) diverged from all seeds")]
    ShootingDiverged { lambda: Complex64, eps: f64 },
    /// The density m_s vanishes at the requested boundary angle.
    #[error("density of μ_s vanishes at φ = {0}")]
    ZeroDensity(f64),
    /// The point is not in the closure of Σ_s.
    #[error("point {0} lies outside the closed source domain")]
    OutsideSource(Complex64),
    /// The point is not in the closure of Σ_{s,τ}.
    #[error("point {0} lies outside the closed target domain")]
    OutsideTarget(Complex64),
    /// A word needed on the right-hand side is absent from the moment table.
    #[error("moment of word {0} is missing from the table")]
    MissingLowerWord(String),
    /// The step-halving error estimate exceeds the tolerance.
    #[error("step too large: estimated error {estimate:e} exceeds {tolerance:e}")]
    StepTooLarge { estimate: f64, tolerance: f64 },
    /// The regularized Gram matrix is not numerically positive definite.
    #[error("Cholesky factorization failed (ε too small for the conditioning)")]
    CholeskyFailure,
}

impl Error {
    /// True for errors caused by invalid input rather than numerical breakdown.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidMeasure(_) | Error::InvalidParams(_) | Error::InvalidArgument(_)
        )
    }
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
