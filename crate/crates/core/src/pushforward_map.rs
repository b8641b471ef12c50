//! The homeomorphism Φ_{s,τ} from the closure of Σ_s onto the closure of
//! Σ_{s,τ}, its inverse, the degenerate limit Φ_s and Monte-Carlo checks that
//! Φ_{s,τ} pushes μ_{s,s} forward to μ_{s,τ}.
//!
//! Φ_{s,τ}(r e^{iθ}) = (r/r_s(θ))^{τ/s} f_{s−τ}(r_s(θ) e^{iθ}) sends the radial
//! segment over θ onto the exponential spiral with δ-coordinate δ^{s,τ}(θ).

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::brown_measure::{locate, sample, AngleSampler};
use crate::circle_measure::{wrap_angle, BrownParams, CircleMeasure};
use crate::error::{Error, Result};
use crate::quadrature::adaptive_simpson;
use crate::spectral_domain::{build_profile, DomainProfile, LiftedMap, Location, SpiralCoords};

/// Tolerance of the membership tests at the domain of Φ_{s,τ} and its inverse.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

/// The pair of profiles at (s, s) and (s, τ) for one μ₀.
#[derive(Debug, Clone)]
pub struct PushMap {
    source: DomainProfile,
    target: DomainProfile,
}

impl PushMap {
    /// Builds both profiles on a grid of `n` nodes.
    pub fn new(m: &CircleMeasure, s: f64, tau: Complex64, n: usize) -> Result<Self> {
        let target = build_profile(m, BrownParams::new(s, tau)?, n)?;
        Self::from_target(target)
    }

    /// Derives the source profile at τ = s from a target profile.
    pub fn from_target(target: DomainProfile) -> Result<Self> {
        let source = target.with_tau(Complex64::new(target.params().s(), 0.0))?;
        Ok(Self { source, target })
    }

    pub fn source(&self) -> &DomainProfile {
        &self.source
    }

    pub fn target(&self) -> &DomainProfile {
        &self.target
    }

    fn s(&self) -> f64 {
        self.target.params().s()
    }

    /// Φ_{s,τ}(λ) for λ in the closure of Σ_s.
    pub fn phi_stau(&self, lambda: Complex64) -> Result<Complex64> {
        if lambda.norm() == 0.0 || !self.source.in_sigma_s_closure(lambda, MEMBERSHIP_TOL) {
            return Err(Error::OutsideSource(lambda));
        }
        let theta = lambda.arg();
        let q = self.target.point(theta);
        let p = self.target.params();
        let edge = self.target.measure().f_beta(Complex64::new(p.s(), 0.0) - p.tau(), Complex64::from_polar(q.r_s, theta))?;
        let log_ratio = lambda.norm().ln() - q.r_s.ln();
        Ok((p.tau() / p.s() * log_ratio).exp() * edge)
    }

    /// Φ_{s,τ}⁻¹(λ) for λ in the closure of Σ_{s,τ}.
    ///
    /// θ solves δ^{s,τ}(θ) = δ(λ) and then log r = log r_s(θ) + s(v − v₁(θ)).
    pub fn phi_stau_inverse(&self, lambda: Complex64) -> Result<Complex64> {
        let l = locate(&self.target, lambda).ok_or(Error::OutsideTarget(lambda))?;
        let tol = MEMBERSHIP_TOL * (1.0 + l.coords.v.abs());
        if l.location == Location::Outside && !(l.coords.v >= l.v1 - tol && l.coords.v <= l.v2 + tol) {
            return Err(Error::OutsideTarget(lambda));
        }
        let r = (l.point.r_s.ln() + self.s() * (l.coords.v - l.v1)).exp();
        Ok(Complex64::from_polar(r, l.point.theta))
    }

    /// Φ_{s,τ₂} ∘ Φ_{s,τ₁}⁻¹ with `self` at τ₁ and `other` at τ₂.
    pub fn compose_to(&self, other: &PushMap, lambda: Complex64) -> Result<Complex64> {
        other.phi_stau(self.phi_stau_inverse(lambda)?)
    }
}

/// Φ_s(λ) = f_s(r_s(θ) e^{iθ}) = e^{iφ^s(θ)}, θ = arg λ, the τ → 0 limit of Φ_{s,τ}.
pub fn phi_s_limit(prof: &DomainProfile, lambda: Complex64) -> Complex64 {
    Complex64::from_polar(1.0, prof.point(lambda.arg()).phi)
}

/// Outcome of a binned goodness-of-fit test.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PushReport {
    pub n: usize,
    pub bins: usize,
    /// max over bins of |observed − expected| / n.
    pub sup_discrepancy: f64,
    pub chi2: f64,
    pub dof: usize,
    pub pvalue: f64,
    /// Points that could not be mapped or binned.
    pub rejected: usize,
    /// True when some δ-bin contains an angle where the strip has zero width.
    pub touches_contact: bool,
}

/// Equal-mass bins over the strip decomposition of a profile.
///
/// δ is split at the images of m_s-quantiles of θ and v by the fraction
/// (v − v₁)/(v₂ − v₁), so every bin has mass 1/(n_δ n_v) under μ_{s,τ}.
#[derive(Debug, Clone)]
pub struct StripBins {
    delta_edges: Vec<f64>,
    n_v: usize,
    touches_contact: bool,
}

impl StripBins {
    pub fn new(prof: &DomainProfile, n_delta: usize, n_v: usize) -> Self {
        let sampler = AngleSampler::new(prof);
        let delta_edges: Vec<f64> =
            (0..=n_delta).map(|k| prof.point(sampler.quantile(k as f64 / n_delta as f64)).delta).collect();
        let touches_contact = !prof.full_support() || prof.nodes().iter().any(|q| !q.in_support());
        Self { delta_edges, n_v, touches_contact }
    }

    pub fn len(&self) -> usize {
        (self.delta_edges.len() - 1) * self.n_v
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Bin index of λ, or `None` when λ is not in the closed domain.
    pub fn index(&self, prof: &DomainProfile, lambda: Complex64) -> Option<usize> {
        let l = locate(prof, lambda)?;
        let width = l.v2 - l.v1;
        if !(width > 0.0) {
            return None;
        }
        let t = (l.coords.v - l.v1) / width;
        if !(-1e-7..=1.0 + 1e-7).contains(&t) {
            return None;
        }
        let d0 = self.delta_edges[0];
        let d = d0 + (l.coords.delta - d0).rem_euclid(TAU);
        let kd = self.delta_edges.partition_point(|&e| e <= d).clamp(1, self.delta_edges.len() - 1) - 1;
        let kv = ((t * self.n_v as f64).floor() as isize).clamp(0, self.n_v as isize - 1) as usize;
        Some(kd * self.n_v + kv)
    }
}

fn chi_square_report(counts: &[usize], rejected: usize, touches_contact: bool) -> PushReport {
    let n: usize = counts.iter().sum::<usize>() + rejected;
    let bins = counts.len();
    let expected = n as f64 / bins as f64;
    let mut chi2 = 0.0;
    let mut sup = 0.0f64;
    for &c in counts {
        let d = c as f64 - expected;
        chi2 += d * d / expected;
        sup = sup.max(d.abs() / n as f64);
    }
    let dof = bins - 1;
    let pvalue = match ChiSquared::new(dof as f64) {
        Ok(dist) => 1.0 - dist.cdf(chi2),
        Err(_) => f64::NAN,
    };
    PushReport { n, bins, sup_discrepancy: sup, chi2, dof, pvalue, rejected, touches_contact }
}

fn bin_points(prof: &DomainProfile, bins: &StripBins, pts: &[Option<Complex64>]) -> (Vec<usize>, usize) {
    let idx: Vec<Option<usize>> = pts.par_iter().map(|p| p.and_then(|z| bins.index(prof, z))).collect();
    let mut counts = vec![0usize; bins.len()];
    let mut rejected = 0;
    for i in idx {
        match i {
            Some(k) => counts[k] += 1,
            None => rejected += 1,
        }
    }
    (counts, rejected)
}

/// Samples μ_{s,s}, maps the draws through Φ_{s,τ} and runs a chi-square test
/// against the equal-mass strip bins of μ_{s,τ} (`bins` per axis).
pub fn verify_pushforward(map: &PushMap, n: usize, bins: usize, seed: u64) -> Result<PushReport> {
    if n < 10_000 {
        return Err(Error::InvalidArgument(format!("verification needs n ≥ 10⁴ draws, got {n}")));
    }
    if bins < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 bins per axis, got {bins}")));
    }
    let src = sample(&map.source, n, seed)?;
    let mapped: Vec<Option<Complex64>> = src.par_iter().map(|&z| map.phi_stau(z).ok()).collect();
    let sb = StripBins::new(&map.target, bins, bins);
    let (counts, rejected) = bin_points(&map.target, &sb, &mapped);
    Ok(chi_square_report(&counts, rejected, sb.touches_contact))
}

/// Samples μ_{s,τ₁}, maps the draws through Φ_{s,τ₂} ∘ Φ_{s,τ₁}⁻¹ and tests
/// them against the strip bins of μ_{s,τ₂}.
pub fn verify_composite(first: &PushMap, second: &PushMap, n: usize, bins: usize, seed: u64) -> Result<PushReport> {
    if n < 10_000 {
        return Err(Error::InvalidArgument(format!("verification needs n ≥ 10⁴ draws, got {n}")));
    }
    let src = sample(&first.target, n, seed)?;
    let mapped: Vec<Option<Complex64>> = src.par_iter().map(|&z| first.compose_to(second, z).ok()).collect();
    let sb = StripBins::new(&second.target, bins, bins);
    let (counts, rejected) = bin_points(&second.target, &sb, &mapped);
    Ok(chi_square_report(&counts, rejected, sb.touches_contact))
}

/// Histogram check of Φ_s applied to draws of μ_{s,s}.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitReport {
    pub n: usize,
    pub bins: usize,
    pub observed: Vec<usize>,
    /// Expected counts n ∫_bin m_s dφ/2π.
    pub expected: Vec<f64>,
    /// max over bins of |observed − expected| / √(n p (1 − p)).
    pub max_sigma: f64,
    /// Largest deviation of |Φ_s(λ)| from 1.
    pub max_modulus_error: f64,
}

/// Maps `n` draws of μ_{s,s} through Φ_s and compares the angle histogram on
/// `bins` equal bins of [−π, π) with the bin masses of m_s.
pub fn verify_limit(prof: &DomainProfile, n: usize, bins: usize, seed: u64) -> Result<LimitReport> {
    if bins < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 bins, got {bins}")));
    }
    let source = prof.with_tau(Complex64::new(prof.params().s(), 0.0))?;
    let pts = sample(&source, n, seed)?;
    let images: Vec<Complex64> = pts.par_iter().map(|&z| phi_s_limit(&source, z)).collect();
    let width = TAU / bins as f64;
    let mut observed = vec![0usize; bins];
    let mut max_modulus_error = 0.0f64;
    for w in &images {
        max_modulus_error = max_modulus_error.max((w.norm() - 1.0).abs());
        let k = (((wrap_angle(w.arg()) + PI) / width).floor() as usize).min(bins - 1);
        observed[k] += 1;
    }
    let masses: Vec<f64> = (0..bins)
        .into_par_iter()
        .map(|k| {
            let a = -PI + k as f64 * width;
            adaptive_simpson(|phi| [source.mu_s_density(phi) / TAU], a, a + width, 1e-10, 30)[0]
        })
        .collect();
    let mut max_sigma = 0.0f64;
    let expected: Vec<f64> = masses.iter().map(|&p| n as f64 * p).collect();
    for (k, &p) in masses.iter().enumerate() {
        let var = n as f64 * p * (1.0 - p);
        let dev = (observed[k] as f64 - expected[k]).abs();
        let z = if var > 0.0 { dev / var.sqrt() } else if dev > 0.0 { f64::INFINITY } else { 0.0 };
        max_sigma = max_sigma.max(z);
    }
    Ok(LimitReport { n, bins, observed, expected, max_sigma, max_modulus_error })
}

/// The (v, δ) coordinates of Φ_{s,τ}(r e^{iθ}) as a function of (log r, θ).
///
/// Returns the Jacobian entries (∂v/∂log r, ∂v/∂θ, ∂δ/∂log r, ∂δ/∂θ) by
/// centered differences with step `h`.
pub fn coordinate_jacobian(map: &PushMap, lambda: Complex64, h: f64) -> Result<[f64; 4]> {
    let p = map.target.params();
    let coords = |rho: f64, theta: f64| -> Result<SpiralCoords> {
        Ok(SpiralCoords::from_lambda(p, map.phi_stau(Complex64::from_polar(rho.exp(), theta))?))
    };
    let (rho, theta) = (lambda.norm().ln(), lambda.arg());
    let unwrap = |d: f64, reference: f64| reference + wrap_angle(d - reference);
    let c0 = coords(rho, theta)?;
    let (rp, rm) = (coords(rho + h, theta)?, coords(rho - h, theta)?);
    let (tp, tm) = (coords(rho, theta + h)?, coords(rho, theta - h)?);
    Ok([
        (rp.v - rm.v) / (2.0 * h),
        (tp.v - tm.v) / (2.0 * h),
        (unwrap(rp.delta, c0.delta) - unwrap(rm.delta, c0.delta)) / (2.0 * h),
        (unwrap(tp.delta, c0.delta) - unwrap(tm.delta, c0.delta)) / (2.0 * h),
    ])
}

/// δ of the image of every point of the radial segment over θ (for audits).
pub fn segment_deltas(map: &PushMap, theta: f64, k: usize) -> Result<Vec<f64>> {
    let q = map.source.point(theta);
    let (a, b) = (q.r_s.ln(), -q.r_s.ln());
    (0..k)
        .map(|j| {
            let rho = a + (b - a) * j as f64 / (k - 1).max(1) as f64;
            let w = map.phi_stau(Complex64::from_polar(rho.exp(), theta))?;
            Ok(SpiralCoords::from_lambda(map.target.params(), w).delta)
        })
        .collect()
}

/// θ with δ^{s,τ}(θ) = δ for the target profile.
pub fn theta_of_delta(map: &PushMap, delta: f64) -> f64 {
    map.target.invert_lifted(LiftedMap::Delta, delta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn four() -> PushMap {
        PushMap::new(&CircleMeasure::four_points(), 1.0, Complex64::new(1.0, 0.5), 512).unwrap()
    }

    #[test]
    fn edge_maps_to_edge_image() {
        let m = four();
        let theta = 0.2;
        let q = m.target().point(theta);
        let z = Complex64::from_polar(q.r_s, theta);
        let w = m.phi_stau(z).unwrap();
        let p = m.target().params();
        let direct = m.target().measure().f_beta(p.s() - p.tau(), z).unwrap();
        assert!((w - direct).norm() < 1e-14);
    }

    #[test]
    fn identity_at_tau_s() {
        let m = PushMap::new(&CircleMeasure::four_points(), 1.0, Complex64::new(1.0, 0.0), 512).unwrap();
        let z = Complex64::from_polar(1.05, 0.1);
        assert!((m.phi_stau(z).unwrap() - z).norm() < 1e-10);
        assert!((m.phi_stau_inverse(z).unwrap() - z).norm() < 1e-10);
    }

    #[test]
    fn round_trip() {
        let m = four();
        let z = Complex64::from_polar(0.95, 0.05);
        let w = m.phi_stau(z).unwrap();
        assert!((m.phi_stau_inverse(w).unwrap() - z).norm() < 1e-9);
    }

    #[test]
    fn outside_source_rejected() {
        let m = four();
        assert!(matches!(m.phi_stau(Complex64::new(3.0, 0.0)), Err(Error::OutsideSource(_))));
        assert!(matches!(m.phi_stau_inverse(Complex64::new(30.0, 0.0)), Err(Error::OutsideTarget(_))));
    }

    #[test]
    fn radial_segment_has_constant_delta() {
        let m = four();
        let d = segment_deltas(&m, 0.3, 9).unwrap();
        for x in &d {
            assert!((wrap_angle(x - d[0])).abs() < 1e-12);
        }
    }
}
