//! The Brown measure μ_{s,τ}: pointwise density, rasters, total mass and
//! exact sampling through the strip decomposition of Σ_{s,τ}.
//!
//! In the coordinates λ = e^{vτ} e^{iδ} the measure is
//! (1/2π)(dφ/dδ) dv dδ on the strips {v₁(δ) < v < v₂(δ)}, so its density
//! with respect to dx dy is (1/(2πτ₁)) |λ|⁻² dφ/dδ.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{adaptive_simpson, smoothstep};
use crate::spectral_domain::{DomainProfile, LiftedMap, Location, ProfilePoint, SpiralCoords, CONTAINS_TOL};

/// Smallest accepted raster resolution per axis.
pub const MIN_RASTER: usize = 16;

/// Axis-aligned rectangle in the λ-plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Bounds {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self> {
        if !(x_max > x_min && y_max > y_min) || ![x_min, x_max, y_min, y_max].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "degenerate bounds [{x_min}, {x_max}] × [{y_min}, {y_max}]"
            )));
        }
        Ok(Self { x_min, x_max, y_min, y_max })
    }

    /// The square [−a, a]².
    pub fn square(a: f64) -> Result<Self> {
        Self::new(-a, a, -a, a)
    }
}

/// Density samples on a regular grid of cell centres.
///
/// `values[j * nx + i]` belongs to the cell centred at
/// `(x_min + (i + ½)Δx, y_min + (j + ½)Δy)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityRaster {
    pub bounds: Bounds,
    pub nx: usize,
    pub ny: usize,
    pub values: Vec<f64>,
}

impl DensityRaster {
    pub fn dx(&self) -> f64 {
        (self.bounds.x_max - self.bounds.x_min) / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        (self.bounds.y_max - self.bounds.y_min) / self.ny as f64
    }

    /// Centre of cell `(i, j)`.
    pub fn centre(&self, i: usize, j: usize) -> Complex64 {
        Complex64::new(
            self.bounds.x_min + (i as f64 + 0.5) * self.dx(),
            self.bounds.y_min + (j as f64 + 0.5) * self.dy(),
        )
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.nx + i]
    }

    /// Riemann sum of the density over the raster.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.dx() * self.dy()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    /// Binary PGM (P5) heatmap, top row at `y_max`, gray linear in the density.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.nx, self.ny).into_bytes();
        let top = self.max();
        for j in (0..self.ny).rev() {
            for i in 0..self.nx {
                let g = if top > 0.0 { (255.0 * self.get(i, j) / top).round().clamp(0.0, 255.0) } else { 0.0 };
                out.push(g as u8);
            }
        }
        out
    }
}

/// The density with respect to dρ dθ on a grid over (ρ, θ) = (log|λ|, arg λ).
///
/// `values[j * n_rho + i]` belongs to `(ρ_i, θ_j)` with cell centres on
/// `[rho_min, rho_max] × [−π, π)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogRaster {
    pub rho_min: f64,
    pub rho_max: f64,
    pub n_rho: usize,
    pub n_theta: usize,
    pub values: Vec<f64>,
}

impl LogRaster {
    pub fn rho(&self, i: usize) -> f64 {
        self.rho_min + (i as f64 + 0.5) * (self.rho_max - self.rho_min) / self.n_rho as f64
    }

    pub fn theta(&self, j: usize) -> f64 {
        -PI + (j as f64 + 0.5) * TAU / self.n_theta as f64
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.n_rho + i]
    }
}

/// Classification of λ together with the profile point over its δ-coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Located {
    pub location: Location,
    pub coords: SpiralCoords,
    pub point: ProfilePoint,
    pub v1: f64,
    pub v2: f64,
}

/// Locates λ ≠ 0 in the strip decomposition of Σ_{s,τ}.
pub fn locate(prof: &DomainProfile, lambda: Complex64) -> Option<Located> {
    if lambda.norm() == 0.0 || !lambda.re.is_finite() || !lambda.im.is_finite() {
        return None;
    }
    let coords = SpiralCoords::from_lambda(prof.params(), lambda);
    let theta = prof.invert_lifted(LiftedMap::Delta, coords.delta);
    let point = prof.point(theta);
    let (v1, v2) = prof.strip_of(&point);
    let location = if coords.v > v1 + CONTAINS_TOL && coords.v < v2 - CONTAINS_TOL {
        Location::Inside
    } else if (coords.v - v1).abs() <= CONTAINS_TOL || (coords.v - v2).abs() <= CONTAINS_TOL {
        Location::Boundary
    } else {
        Location::Outside
    };
    Some(Located { location, coords, point, v1, v2 })
}

/// dφ^{s,τ}/dδ over a profile point, as the ratio of θ-derivatives.
pub fn dphi_ddelta(q: &ProfilePoint) -> f64 {
    q.d_phi / q.d_delta
}

/// Density of μ_{s,τ} with respect to dx dy at λ; zero off the open domain.
pub fn density(prof: &DomainProfile, lambda: Complex64) -> f64 {
    match locate(prof, lambda) {
        Some(l) if l.location == Location::Inside => {
            dphi_ddelta(&l.point) / (TAU * prof.params().tau1() * lambda.norm_sqr())
        }
        _ => 0.0,
    }
}

/// Density with respect to dρ dθ, that is |λ|² times [`density`].
pub fn log_density(prof: &DomainProfile, lambda: Complex64) -> f64 {
    match locate(prof, lambda) {
        Some(l) if l.location == Location::Inside => dphi_ddelta(&l.point) / (TAU * prof.params().tau1()),
        _ => 0.0,
    }
}

/// (1/2π) ∫ (dφ/dδ)(v₂ − v₁) dδ over one period of δ.
///
/// Each support arc is integrated in δ with adaptive Simpson after a
/// smoothstep substitution, inverting δ^{s,τ} at every node.
pub fn total_mass(prof: &DomainProfile) -> f64 {
    let integrand = |delta: f64| -> f64 {
        let theta = prof.invert_lifted(LiftedMap::Delta, delta);
        let q = prof.point(theta);
        if !q.in_support() {
            return 0.0;
        }
        let (v1, v2) = prof.strip_of(&q);
        dphi_ddelta(&q) * (v2 - v1) / TAU
    };
    let mut total = 0.0;
    if prof.full_support() {
        let d0 = prof.point(-PI).delta;
        total += adaptive_simpson(|t| [integrand(d0 + TAU * t) * TAU], 0.0, 1.0, 1e-11, 40)[0];
    } else {
        for &(a, b) in prof.support_arcs() {
            let (da, db) = (prof.point(a).delta, prof.point(b).delta);
            total += adaptive_simpson(
                |t| {
                    let (d, jac) = smoothstep(da, db, t);
                    [integrand(d) * jac]
                },
                0.0,
                1.0,
                1e-11,
                40,
            )[0];
        }
    }
    total
}

fn check_resolution(nx: usize, ny: usize) -> Result<()> {
    if nx < MIN_RASTER || ny < MIN_RASTER {
        return Err(Error::InvalidArgument(format!(
            "raster resolution {nx}×{ny} is below {MIN_RASTER}×{MIN_RASTER}"
        )));
    }
    Ok(())
}

/// Evaluates [`density`] at the centre of every cell.
pub fn raster(prof: &DomainProfile, bounds: Bounds, nx: usize, ny: usize) -> Result<DensityRaster> {
    check_resolution(nx, ny)?;
    let mut r = DensityRaster { bounds, nx, ny, values: Vec::new() };
    r.values = (0..nx * ny).into_par_iter().map(|k| density(prof, r.centre(k % nx, k / nx))).collect();
    Ok(r)
}

/// Evaluates [`log_density`] on a grid over (ρ, θ).
pub fn log_raster(prof: &DomainProfile, rho_min: f64, rho_max: f64, n_rho: usize, n_theta: usize) -> Result<LogRaster> {
    check_resolution(n_rho, n_theta)?;
    if !(rho_max > rho_min) {
        return Err(Error::InvalidArgument(format!("empty ρ-range [{rho_min}, {rho_max}]")));
    }
    let mut r = LogRaster { rho_min, rho_max, n_rho, n_theta, values: Vec::new() };
    r.values = (0..n_rho * n_theta)
        .into_par_iter()
        .map(|k| {
            let lambda = Complex64::from_polar(r.rho(k % n_rho).exp(), r.theta(k / n_rho));
            log_density(prof, lambda)
        })
        .collect();
    Ok(r)
}

/// Inverse-CDF table for the angle θ whose image φ^s(θ) is distributed by m_s.
///
/// The density of θ is R_s(θ) φ^s′(θ)/2π. The CDF is tabulated on the
/// profile grid with Simpson increments and interpolated by cubic Hermite
/// polynomials using the exact derivative at each node.
#[derive(Debug, Clone)]
pub struct AngleSampler {
    thetas: Vec<f64>,
    cdf: Vec<f64>,
    pdf: Vec<f64>,
}

impl AngleSampler {
    pub fn new(prof: &DomainProfile) -> Self {
        let nodes = prof.nodes();
        let n = nodes.len();
        let f = |q: &ProfilePoint| if q.in_support() { q.r_big * q.d_phi / TAU } else { 0.0 };
        let mut thetas: Vec<f64> = nodes.iter().map(|q| q.theta).collect();
        thetas.push(nodes[0].theta + TAU);
        let mut pdf: Vec<f64> = nodes.iter().map(f).collect();
        pdf.push(pdf[0]);
        let increments: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|k| {
                let (a, b) = (thetas[k], thetas[k + 1]);
                let mid = f(&prof.point(0.5 * (a + b)));
                (b - a) / 6.0 * (pdf[k] + 4.0 * mid + pdf[k + 1])
            })
            .collect();
        let mut cdf = Vec::with_capacity(n + 1);
        cdf.push(0.0);
        for inc in increments {
            cdf.push(cdf.last().unwrap() + inc.max(0.0));
        }
        let total = *cdf.last().unwrap();
        for c in cdf.iter_mut() {
            *c /= total;
        }
        for p in pdf.iter_mut() {
            *p /= total;
        }
        Self { thetas, cdf, pdf }
    }

    /// The θ with CDF(θ) = u, lifted into `[θ₀, θ₀ + 2π)`.
    pub fn quantile(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let k = self.cdf.partition_point(|&c| c < u).clamp(1, self.cdf.len() - 1) - 1;
        let (a, b) = (self.thetas[k], self.thetas[k + 1]);
        let h = b - a;
        let (f0, f1, d0, d1) = (self.cdf[k], self.cdf[k + 1], self.pdf[k] * h, self.pdf[k + 1] * h);
        if f1 <= f0 {
            return a;
        }
        let hermite = |t: f64| {
            let t2 = t * t;
            let t3 = t2 * t;
            (2.0 * t3 - 3.0 * t2 + 1.0) * f0 + (t3 - 2.0 * t2 + t) * d0 + (-2.0 * t3 + 3.0 * t2) * f1 + (t3 - t2) * d1
        };
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if hermite(mid) < u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        a + 0.5 * (lo + hi) * h
    }
}

/// Draws `n` points from μ_{s,τ}.
///
/// Draw `k` uses its own ChaCha8 stream `k` under `seed`, so the output does
/// not depend on the number of worker threads.
pub fn sample(prof: &DomainProfile, n: usize, seed: u64) -> Result<Vec<Complex64>> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    let sampler = AngleSampler::new(prof);
    let tau = prof.params().tau();
    Ok((0..n)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let u1: f64 = rng.random();
            let u2: f64 = rng.random();
            let q = prof.point(sampler.quantile(u1));
            let (v1, v2) = prof.strip_of(&q);
            let v = v1 + u2 * (v2 - v1);
            (v * tau + Complex64::new(0.0, q.delta)).exp()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circle_measure::{BrownParams, CircleMeasure};
    use crate::spectral_domain::build_profile;

    fn prof(m: CircleMeasure, s: f64, tau: Complex64) -> DomainProfile {
        build_profile(&m, BrownParams::new(s, tau).unwrap(), 512).unwrap()
    }

    #[test]
    fn outside_is_zero() {
        let p = prof(CircleMeasure::delta1(), 1.0, Complex64::new(1.0, 0.0));
        assert_eq!(density(&p, Complex64::new(-0.9, 0.0)), 0.0);
        assert_eq!(density(&p, Complex64::new(5.0, 0.0)), 0.0);
        assert!(density(&p, Complex64::new(1.0, 0.05)) > 0.0);
    }

    #[test]
    fn mass_is_one() {
        let p = prof(CircleMeasure::four_points(), 1.0, Complex64::new(1.0, 0.5));
        assert!((total_mass(&p) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn tau_direction_invariance() {
        let p = prof(CircleMeasure::delta1(), 1.0, Complex64::new(0.8, 0.4));
        let l = Complex64::new(1.1, 0.2);
        let l2 = l * (0.1 * p.params().tau()).exp();
        assert_eq!(locate(&p, l).unwrap().location, Location::Inside);
        assert_eq!(locate(&p, l2).unwrap().location, Location::Inside);
        let a = l.norm_sqr() * density(&p, l);
        let b = l2.norm_sqr() * density(&p, l2);
        assert!((a - b).abs() < 1e-9 * a);
    }

    #[test]
    fn samples_lie_in_closure() {
        let p = prof(CircleMeasure::four_points(), 1.0, Complex64::new(1.0, 0.5));
        let pts = sample(&p, 500, 7).unwrap();
        for z in pts {
            assert_ne!(p.contains_with_tol(z, 1e-7), Location::Outside);
        }
    }

    #[test]
    fn pgm_header() {
        let r = DensityRaster { bounds: Bounds::square(1.0).unwrap(), nx: 16, ny: 16, values: vec![1.0; 256] };
        let pgm = r.to_pgm();
        assert!(pgm.starts_with(b"P5\n16 16\n255\n"));
        assert_eq!(pgm.len(), 13 + 256);
    }
}
