//! The boundary profile r_s(θ), the maps φ^s and δ^{s,τ}, the domains Σ_s and
//! Σ_{s,τ}, the density m_s of μ_s and inverses of f_β.
//!
//! Every per-angle quantity is available in two forms. [`DomainProfile::point`]
//! evaluates it from scratch at any angle. The tabulated grid in
//! [`DomainProfile::nodes`] is used for output and for bracketing inverses.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::circle_measure::{wrap_angle, BrownParams, CircleMeasure};
use crate::error::{Error, Result};

/// Minimum number of base grid nodes accepted by [`build_profile`].
pub const MIN_GRID: usize = 64;

/// Clamp bounds for dφ^s/dθ where r_s(θ) < 1.
pub const DERIVATIVE_FLOOR: f64 = 1e-12;

/// Tolerance in v used by [`DomainProfile::contains`].
pub const CONTAINS_TOL: f64 = 1e-9;

/// Target residual of [`invert_f_beta`].
pub const INVERSION_TOL: f64 = 1e-11;

/// Maximum number of continuation steps in [`invert_f_beta`].
pub const MAX_CONTINUATION_STEPS: usize = 200;

/// The unique r < 1 with T(r e^{iθ}) = s, or 1 when no such r exists.
///
/// Bisection on the monotone function r ↦ T(r e^{iθ}) down to a bracket
/// narrower than 1e−15 (well inside the 1e−12 requirement).
pub fn radial_profile(m: &CircleMeasure, s: f64, theta: f64) -> f64 {
    let on_circle = Complex64::from_polar(1.0, theta);
    if m.t_fn(on_circle) >= s {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo < 1e-15 {
            break;
        }
        if m.t_fn(Complex64::from_polar(mid, theta)) > s {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Every profile quantity at one angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProfilePoint {
    /// The angle θ (any real; φ and δ are lifted consistently with it).
    pub theta: f64,
    /// r_s(θ) ∈ (0, 1].
    pub r_s: f64,
    /// I_s(θ) = Im J(r_s e^{iθ}).
    pub i_s: f64,
    /// R_s(θ) = −(2/s) log r_s(θ) = Re J(r_s e^{iθ}).
    pub r_big: f64,
    /// φ^s(θ) = θ + (s/2) I_s(θ).
    pub phi: f64,
    /// δ^{s,τ}(θ) = θ + ((s − |τ|²/τ₁)/2) I_s(θ).
    pub delta: f64,
    /// dφ^s/dθ.
    pub d_phi: f64,
    /// dδ^{s,τ}/dθ.
    pub d_delta: f64,
}

impl ProfilePoint {
    /// True when r_s(θ) < 1, so that the strip over this angle is nonempty.
    pub fn in_support(&self) -> bool {
        self.r_s < 1.0
    }
}

/// Twisted logarithmic coordinates λ = e^{vτ} e^{iδ}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpiralCoords {
    pub v: f64,
    pub delta: f64,
}

impl SpiralCoords {
    /// v = log|λ|/τ₁ and δ = arg λ − (τ₂/τ₁) log|λ|.
    pub fn from_lambda(p: &BrownParams, lambda: Complex64) -> Self {
        let rho = lambda.norm().ln();
        Self { v: rho / p.tau1(), delta: lambda.arg() - p.tau2() / p.tau1() * rho }
    }

    /// λ = e^{vτ} e^{iδ}.
    pub fn to_lambda(&self, p: &BrownParams) -> Complex64 {
        (self.v * p.tau() + Complex64::new(0.0, self.delta)).exp()
    }
}

/// Classification returned by [`DomainProfile::contains`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Location {
    Inside,
    Outside,
    Boundary,
}

/// The strip of Σ_{s,τ} over one δ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VBounds {
    pub v1: f64,
    pub v2: f64,
    /// The angle θ with δ^{s,τ}(θ) = δ, lifted to match the requested δ.
    pub theta: f64,
}

/// Which lifted map to invert.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LiftedMap {
    Phi,
    Delta,
}

/// Which arc of the boundary a polyline point belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Arc {
    Inner,
    Outer,
}

impl Arc {
    pub fn name(&self) -> &'static str {
        match self {
            Arc::Inner => "inner",
            Arc::Outer => "outer",
        }
    }
}

/// Tabulated boundary profile of Σ_s and Σ_{s,τ}.
#[derive(Debug, Clone)]
pub struct DomainProfile {
    measure: CircleMeasure,
    params: BrownParams,
    arcs: Vec<(f64, f64)>,
    full_support: bool,
    nodes: Vec<ProfilePoint>,
}

/// Rounding allowance when checking that δ is nondecreasing on the grid.
/// δ′ vanishes at support edges when |τ|²/τ₁ is small, so nodes a few ulps
/// apart there can carry equal or swapped values.
const MONOTONE_SLACK: f64 = 1e-13;

/// Builds the profile on a uniform grid of `n` nodes plus refinement near the
/// edges of the support of μ_s.
///
/// Each support edge gets dyadic nodes at distances 2⁻⁶⁻ᵏ (k = 0..24) on both
/// sides, and base cells within 2⁻⁶ of an edge are bisected twice.
/// Derivatives are evaluated in closed form from implicit differentiation of
/// T(r_s(θ) e^{iθ}) = s.
pub fn build_profile(m: &CircleMeasure, p: BrownParams, n: usize) -> Result<DomainProfile> {
    if n < MIN_GRID {
        return Err(Error::InvalidArgument(format!("grid size {n} is below {MIN_GRID}")));
    }
    let (arcs, full_support) = support_arcs(m, p.s());
    let mut prof = DomainProfile { measure: m.clone(), params: p, arcs, full_support, nodes: Vec::new() };
    let mut thetas = base_grid(&prof, n);
    for attempt in 0..3 {
        let nodes: Vec<ProfilePoint> = thetas.par_iter().map(|&t| prof.point(t)).collect();
        let monotone = nodes.windows(2).all(|w| w[1].delta > w[0].delta - MONOTONE_SLACK)
            && nodes.last().is_none_or(|l| l.delta < nodes[0].delta + TAU);
        if monotone {
            prof.nodes = nodes;
            return Ok(prof);
        }
        if attempt == 2 {
            break;
        }
        let mut refined = Vec::with_capacity(2 * thetas.len());
        for (i, &t) in thetas.iter().enumerate() {
            refined.push(t);
            let next = if i + 1 < thetas.len() { thetas[i + 1] } else { thetas[0] + TAU };
            refined.push(0.5 * (t + next));
        }
        thetas = refined;
    }
    Err(Error::GridTooCoarse { n })
}

fn base_grid(prof: &DomainProfile, n: usize) -> Vec<f64> {
    let h = TAU / n as f64;
    let mut thetas: Vec<f64> = (0..n).map(|k| -PI + k as f64 * h).collect();
    let edges = prof.edges();
    let near = 2f64.powi(-6);
    for &e in &edges {
        for k in 0..25 {
            let d = near * 2f64.powi(-k);
            thetas.push(e - d);
            thetas.push(e + d);
        }
        thetas.push(e);
    }
    for k in 0..n {
        let a = -PI + k as f64 * h;
        let close = edges.iter().any(|&e| {
            let d = wrap_angle(a + 0.5 * h - e).abs();
            d < near + h
        });
        if close {
            for j in 1..4 {
                thetas.push(a + j as f64 * h / 4.0);
            }
        }
    }
    let mut wrapped: Vec<f64> = thetas.into_iter().map(wrap_angle).collect();
    wrapped.sort_by(f64::total_cmp);
    wrapped.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    wrapped
}

/// Arcs {θ : r_s(θ) < 1} as lifted intervals `(a, b)` with `a ∈ [−π, π)`.
///
/// The second value is true when the support is the whole circle.
fn support_arcs(m: &CircleMeasure, s: f64) -> (Vec<(f64, f64)>, bool) {
    let inside = |t: f64| m.t_fn(Complex64::from_polar(1.0, t)) < s;
    let base = 4096.max(64 * m.angles().len());
    let mut grid: Vec<f64> = (0..base).map(|k| -PI + TAU * k as f64 / base as f64).collect();
    grid.extend_from_slice(m.angles());
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let flags: Vec<bool> = grid.iter().map(|&t| inside(t)).collect();
    if flags.iter().all(|&f| f) {
        return (vec![(-PI, PI)], true);
    }
    if flags.iter().all(|&f| !f) {
        return (Vec::new(), false);
    }
    let n = grid.len();
    let mut ups = Vec::new();
    let mut downs = Vec::new();
    for i in 0..n {
        let j = (i + 1) % n;
        let (a, mut b) = (grid[i], grid[j]);
        if j == 0 {
            b += TAU;
        }
        if flags[i] != flags[j] {
            let (mut lo, mut hi) = (a, b);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if inside(mid) == flags[i] {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let e = 0.5 * (lo + hi);
            if flags[j] {
                ups.push(e);
            } else {
                downs.push(e);
            }
        }
    }
    let mut arcs = Vec::new();
    for &u in &ups {
        let uw = wrap_angle(u);
        let mut best = f64::INFINITY;
        for &d in &downs {
            let gap = (d - uw).rem_euclid(TAU);
            if gap > 0.0 && gap < best {
                best = gap;
            }
        }
        arcs.push((uw, uw + best));
    }
    arcs.sort_by(|x, y| x.0.total_cmp(&y.0));
    (arcs, false)
}

impl DomainProfile {
    pub fn measure(&self) -> &CircleMeasure {
        &self.measure
    }

    pub fn params(&self) -> &BrownParams {
        &self.params
    }

    /// The tabulated grid, sorted by θ ∈ [−π, π).
    pub fn nodes(&self) -> &[ProfilePoint] {
        &self.nodes
    }

    /// Support arcs of μ_s in the θ variable, as lifted intervals.
    pub fn support_arcs(&self) -> &[(f64, f64)] {
        &self.arcs
    }

    /// True when r_s(θ) < 1 for every θ.
    pub fn full_support(&self) -> bool {
        self.full_support
    }

    /// Endpoints of all support arcs, wrapped into `[−π, π)`.
    pub fn edges(&self) -> Vec<f64> {
        if self.full_support {
            return Vec::new();
        }
        self.arcs.iter().flat_map(|&(a, b)| [wrap_angle(a), wrap_angle(b)]).collect()
    }

    /// The same μ₀ and s with a different τ. The tabulated grid is reused.
    pub fn with_tau(&self, tau: Complex64) -> Result<DomainProfile> {
        let params = BrownParams::new(self.params.s(), tau)?;
        let mut out = DomainProfile {
            measure: self.measure.clone(),
            params,
            arcs: self.arcs.clone(),
            full_support: self.full_support,
            nodes: Vec::new(),
        };
        let c = params.delta_coefficient();
        let rho = params.tau_sq_over_tau1() / params.s();
        out.nodes = self
            .nodes
            .iter()
            .map(|q| ProfilePoint { delta: q.theta + c * q.i_s, d_delta: rho + (1.0 - rho) * q.d_phi, ..*q })
            .collect();
        Ok(out)
    }

    /// Evaluates every profile quantity at θ from first principles.
    pub fn point(&self, theta: f64) -> ProfilePoint {
        let w = wrap_angle(theta);
        let s = self.params.s();
        let r = radial_profile(&self.measure, s, w);
        let e = Complex64::from_polar(1.0, w);
        let (i_s, r_big, d_i) = if r < 1.0 {
            let z = r * e;
            let (j, dj) = match self.measure.herglotz_with_derivative(z) {
                Ok(v) => v,
                Err(_) => (self.measure.herglotz_unchecked(z), Complex64::new(0.0, 0.0)),
            };
            let d_i = match self.measure.t_fn_polar(r, w) {
                Some((_, t_r, t_t)) if t_r != 0.0 => {
                    let dr = -t_t / t_r;
                    (dj * Complex64::new(dr, r) * e).im
                }
                _ => 0.0,
            };
            (j.im, -2.0 / s * r.ln(), d_i)
        } else {
            match self.measure.herglotz_with_derivative(e) {
                Ok((j, dj)) => (j.im, 0.0, (dj * Complex64::new(0.0, 1.0) * e).im),
                Err(_) => (0.0, 0.0, 0.0),
            }
        };
        let mut d_phi = 1.0 + 0.5 * s * d_i;
        if r < 1.0 {
            d_phi = d_phi.clamp(DERIVATIVE_FLOOR, 2.0 - DERIVATIVE_FLOOR);
        }
        let c = self.params.delta_coefficient();
        let rho = self.params.tau_sq_over_tau1() / s;
        ProfilePoint {
            theta,
            r_s: r,
            i_s,
            r_big,
            phi: theta + 0.5 * s * i_s,
            delta: theta + c * i_s,
            d_phi,
            d_delta: rho + (1.0 - rho) * d_phi,
        }
    }

    /// Value of the lifted map at θ.
    pub fn lifted(&self, which: LiftedMap, theta: f64) -> f64 {
        let q = self.point(theta);
        match which {
            LiftedMap::Phi => q.phi,
            LiftedMap::Delta => q.delta,
        }
    }

    /// Solves φ^s(θ) = y or δ^{s,τ}(θ) = y for θ on the lift.
    ///
    /// The tabulated grid brackets the root and a safeguarded Newton iteration
    /// on the exact map refines it until the residual is a few ulps. The
    /// iterate with the smallest residual is returned.
    pub fn invert_lifted(&self, which: LiftedMap, y: f64) -> f64 {
        let pick = |q: &ProfilePoint| match which {
            LiftedMap::Phi => q.phi,
            LiftedMap::Delta => q.delta,
        };
        let first = pick(&self.nodes[0]);
        let k = ((y - first) / TAU).floor();
        let y0 = y - k * TAU;
        let idx = self.nodes.partition_point(|q| pick(q) <= y0);
        let (mut lo, mut hi) = if idx == 0 {
            (self.nodes[0].theta, self.nodes[0].theta)
        } else if idx == self.nodes.len() {
            (self.nodes[idx - 1].theta, self.nodes[0].theta + TAU)
        } else {
            (self.nodes[idx - 1].theta, self.nodes[idx].theta)
        };
        if hi <= lo {
            return lo + k * TAU;
        }
        let target = 4.0 * f64::EPSILON * (1.0 + y0.abs());
        let mut t = 0.5 * (lo + hi);
        let mut best = (f64::INFINITY, t);
        for _ in 0..200 {
            let q = self.point(t);
            let (f, df) = match which {
                LiftedMap::Phi => (q.phi - y0, q.d_phi),
                LiftedMap::Delta => (q.delta - y0, q.d_delta),
            };
            if f.abs() < best.0 {
                best = (f.abs(), t);
            }
            if f.abs() <= target {
                break;
            }
            if f > 0.0 {
                hi = t;
            } else {
                lo = t;
            }
            if hi - lo < 1e-15 {
                break;
            }
            let newton = t - f / df;
            t = if df > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        }
        best.1 + k * TAU
    }

    /// The strip {v₁ < v < v₂} of Σ_{s,τ} over δ.
    ///
    /// v₁ and v₂ are the v-coordinates of f_{s−τ}(r_s(θ)^{±1} e^{iθ}), which
    /// reduce to ∓R_s/2 + τ₂ I_s/(2τ₁).
    pub fn v_bounds(&self, delta: f64) -> VBounds {
        let theta = self.invert_lifted(LiftedMap::Delta, delta);
        let q = self.point(theta);
        let (v1, v2) = self.strip_of(&q);
        VBounds { v1, v2, theta }
    }

    /// The strip endpoints over a given profile point.
    pub fn strip_of(&self, q: &ProfilePoint) -> (f64, f64) {
        let mid = 0.5 * self.params.tau2() * q.i_s / self.params.tau1();
        (mid - 0.5 * q.r_big, mid + 0.5 * q.r_big)
    }

    /// Classifies λ ≠ 0 relative to Σ_{s,τ} with tolerance [`CONTAINS_TOL`] in v.
    pub fn contains(&self, lambda: Complex64) -> Location {
        self.contains_with_tol(lambda, CONTAINS_TOL)
    }

    /// [`DomainProfile::contains`] with an explicit tolerance in v.
    pub fn contains_with_tol(&self, lambda: Complex64, tol: f64) -> Location {
        if lambda.norm() == 0.0 || !lambda.re.is_finite() || !lambda.im.is_finite() {
            return Location::Outside;
        }
        let c = SpiralCoords::from_lambda(&self.params, lambda);
        let b = self.v_bounds(c.delta);
        classify(c.v, b.v1, b.v2, tol)
    }

    /// Classification of λ against the strip dilated by `factor` about its midpoint.
    pub fn contains_dilated(&self, lambda: Complex64, factor: f64) -> Location {
        if lambda.norm() == 0.0 {
            return Location::Outside;
        }
        let c = SpiralCoords::from_lambda(&self.params, lambda);
        let b = self.v_bounds(c.delta);
        let mid = 0.5 * (b.v1 + b.v2);
        let half = 0.5 * (b.v2 - b.v1) * factor;
        classify(c.v, mid - half, mid + half, CONTAINS_TOL)
    }

    /// The density m_s of μ_s with respect to dφ/2π at φ.
    pub fn mu_s_density(&self, phi: f64) -> f64 {
        let theta = self.invert_lifted(LiftedMap::Phi, phi);
        self.point(theta).r_big
    }

    /// Boundary of Σ_{s,τ}: f_{s−τ}(r_s(θ)^{±1} e^{iθ}) on `n` equally spaced angles.
    ///
    /// The first `n` entries form the inner arc and the next `n` the outer arc.
    pub fn boundary_polyline(&self, n: usize) -> Result<Vec<(Complex64, Arc)>> {
        if n < 3 {
            return Err(Error::InvalidArgument(format!("polyline needs n ≥ 3, got {n}")));
        }
        let pts: Vec<ProfilePoint> =
            (0..n).into_par_iter().map(|k| self.point(-PI + TAU * k as f64 / n as f64)).collect();
        let mut out = Vec::with_capacity(2 * n);
        for q in &pts {
            out.push((self.boundary_image(q, Arc::Inner), Arc::Inner));
        }
        for q in &pts {
            out.push((self.boundary_image(q, Arc::Outer), Arc::Outer));
        }
        Ok(out)
    }

    /// f_{s−τ}(r_s^{±1} e^{iθ}) = e^{iφ^s} e^{∓τR_s/2} e^{−iτI_s/2}.
    pub fn boundary_image(&self, q: &ProfilePoint, arc: Arc) -> Complex64 {
        let tau = self.params.tau();
        let sign = match arc {
            Arc::Inner => -1.0,
            Arc::Outer => 1.0,
        };
        Complex64::from_polar(1.0, q.phi)
            * (sign * 0.5 * tau * q.r_big).exp()
            * (Complex64::new(0.0, -0.5) * tau * q.i_s).exp()
    }

    /// True when λ lies in the closure of Σ_s = {r_s(θ) < |λ| < 1/r_s(θ)}.
    pub fn in_sigma_s_closure(&self, lambda: Complex64, tol: f64) -> bool {
        let r = radial_profile(&self.measure, self.params.s(), lambda.arg());
        let a = lambda.norm();
        r < 1.0 && a >= r - tol && a <= 1.0 / r + tol
    }

    /// True when λ lies in the open set Σ_s shrunk by `tol`.
    pub fn in_sigma_s(&self, lambda: Complex64, tol: f64) -> bool {
        let r = radial_profile(&self.measure, self.params.s(), lambda.arg());
        let a = lambda.norm();
        r < 1.0 && a > r + tol && a < 1.0 / r - tol
    }

    /// Centres of the gaps of the support, where r_s = 1.
    pub fn gap_centres(&self) -> Vec<f64> {
        if self.full_support || self.arcs.is_empty() {
            return if self.arcs.is_empty() { vec![0.0] } else { Vec::new() };
        }
        let n = self.arcs.len();
        (0..n)
            .map(|i| {
                let end = self.arcs[i].1;
                let mut next = self.arcs[(i + 1) % n].0;
                while next < end {
                    next += TAU;
                }
                wrap_angle(0.5 * (end + next))
            })
            .collect()
    }
}

fn classify(v: f64, v1: f64, v2: f64, tol: f64) -> Location {
    if v > v1 + tol && v < v2 - tol {
        Location::Inside
    } else if (v - v1).abs() <= tol || (v - v2).abs() <= tol {
        Location::Boundary
    } else {
        Location::Outside
    }
}

/// Region selector for [`invert_f_beta`].
#[derive(Debug, Clone, Copy)]
pub enum InversionRegion<'a> {
    /// Continuation from 0 inside the unit disk.
    InsideDisk,
    /// Continuation from ∞ outside the unit disk.
    OutsideDisk,
    /// The branch on the complement of the closure of Σ_s, whose image under
    /// f_{s−τ} is the complement of the closure of Σ_{s,τ}.
    OutsideSigma(&'a DomainProfile),
}

/// Finds z in the requested region with f_β(z) = w.
///
/// Newton's method is continued along a straight path in the w-plane. Steps
/// are halved when Newton fails. Paths from ∞ are run in the variable
/// u = 1/z on the map u ↦ 1/f_β(1/u).
pub fn invert_f_beta(m: &CircleMeasure, beta: Complex64, w: Complex64, region: InversionRegion<'_>) -> Result<Complex64> {
    let zero = Complex64::new(0.0, 0.0);
    if w == zero {
        return Ok(zero);
    }
    match region {
        InversionRegion::InsideDisk => {
            let z = continue_from_zero(m, beta, zero, zero, w, &|_| true)?;
            polish(m, beta, z, w)
        }
        InversionRegion::OutsideDisk => {
            if beta.im == 0.0 {
                let inner = invert_f_beta(m, beta, 1.0 / w.conj(), InversionRegion::InsideDisk)?;
                return polish(m, beta, 1.0 / inner.conj(), w);
            }
            let u = continue_from_infinity(m, beta, w, &|_| true)?;
            polish(m, beta, 1.0 / u, w)
        }
        InversionRegion::OutsideSigma(prof) => invert_outside_sigma(m, beta, w, prof),
    }
}

fn invert_outside_sigma(m: &CircleMeasure, beta: Complex64, w: Complex64, prof: &DomainProfile) -> Result<Complex64> {
    let zero = Complex64::new(0.0, 0.0);
    let region_ok = |z: Complex64| !prof.in_sigma_s(z, 1e-12);
    let clean = |a: Complex64, b: Complex64| -> bool {
        (0..=64).all(|k| {
            let p = a + (b - a) * (k as f64 / 64.0);
            p.norm() == 0.0 || prof.contains_with_tol(p, 1e-12) != Location::Inside
        })
    };
    let mut last_err = Error::OutOfRegion(w);
    if clean(zero, w) {
        match continue_from_zero(m, beta, zero, zero, w, &region_ok) {
            Ok(z) => return polish(m, beta, z, w),
            Err(e) => last_err = e,
        }
    }
    let far = w * (1e6 / w.norm()).max(1.0);
    if clean(far, w) {
        let ok_u = |u: Complex64| u.norm() == 0.0 || region_ok(1.0 / u);
        match continue_from_infinity(m, beta, w, &ok_u) {
            Ok(u) => return polish(m, beta, 1.0 / u, w),
            Err(e) => last_err = e,
        }
    }
    for g in prof.gap_centres() {
        let z0 = Complex64::from_polar(1.0, g);
        if let Ok(w0) = m.f_beta(beta, z0) {
            if clean(w0, w) {
                match continue_from_zero(m, beta, z0, w0, w, &region_ok) {
                    Ok(z) => return polish(m, beta, z, w),
                    Err(e) => last_err = e,
                }
            }
        }
    }
    Err(last_err)
}

fn polish(m: &CircleMeasure, beta: Complex64, mut z: Complex64, w: Complex64) -> Result<Complex64> {
    for _ in 0..8 {
        let (f, df) = m.f_beta_with_derivative(beta, z)?;
        let step = (f - w) / df;
        z -= step;
        if step.norm() <= 1e-16 * z.norm().max(1e-300) {
            break;
        }
    }
    let f = m.f_beta(beta, z)?;
    if (f - w).norm() <= INVERSION_TOL * w.norm().max(1.0) {
        Ok(z)
    } else {
        Err(Error::NoConvergence { method: "f_beta inversion", iterations: MAX_CONTINUATION_STEPS })
    }
}

/// Continues the solution of F(z) = w(t) from (w0, z0) to w1.
fn continuation<F>(f: F, z0: Complex64, w0: Complex64, w1: Complex64, ok: &dyn Fn(Complex64) -> bool) -> Result<Complex64>
where
    F: Fn(Complex64) -> Option<(Complex64, Complex64)>,
{
    let mut t = 0.0f64;
    let mut z = z0;
    let mut dt = 1.0 / 16.0;
    let mut steps = 0usize;
    let dw = w1 - w0;
    while t < 1.0 {
        if steps >= MAX_CONTINUATION_STEPS {
            return Err(Error::NoConvergence { method: "f_beta continuation", iterations: steps });
        }
        steps += 1;
        let t_new = (t + dt).min(1.0);
        let target = w0 + dw * t_new;
        let mut zc = match f(z) {
            Some((_, df)) if df.norm() > 0.0 => z + dw * (t_new - t) / df,
            _ => z,
        };
        let mut converged = false;
        for _ in 0..40 {
            let Some((fz, df)) = f(zc) else { break };
            if !(df.norm() > 0.0) {
                break;
            }
            let step = (fz - target) / df;
            zc -= step;
            if !(zc.re.is_finite() && zc.im.is_finite()) {
                break;
            }
            if step.norm() <= 1e-14 * zc.norm().max(1e-3) {
                converged = true;
                break;
            }
        }
        let stable = converged && (zc - z).norm() <= 0.5 * z.norm().max(1e-2) + 4.0 * (dw.norm() * (t_new - t));
        if stable {
            if !ok(zc) {
                return Err(Error::OutOfRegion(zc));
            }
            z = zc;
            t = t_new;
            dt = (dt * 1.5).min(0.25);
        } else {
            dt *= 0.5;
            if dt < 1e-12 {
                return Err(Error::NoConvergence { method: "f_beta continuation", iterations: steps });
            }
        }
    }
    Ok(z)
}

fn continue_from_zero(
    m: &CircleMeasure,
    beta: Complex64,
    z0: Complex64,
    w0: Complex64,
    w: Complex64,
    ok: &dyn Fn(Complex64) -> bool,
) -> Result<Complex64> {
    continuation(|z| m.f_beta_with_derivative(beta, z).ok(), z0, w0, w, ok)
}

/// Continuation in u = 1/z for the map u ↦ 1/f_β(1/u) = u e^{−βJ(1/u)/2}.
fn continue_from_infinity(m: &CircleMeasure, beta: Complex64, w: Complex64, ok: &dyn Fn(Complex64) -> bool) -> Result<Complex64> {
    let g = |u: Complex64| -> Option<(Complex64, Complex64)> {
        let mut j = Complex64::new(0.0, 0.0);
        let mut zdj = Complex64::new(0.0, 0.0);
        for (&xi, &wt) in m.points().iter().zip(m.weights()) {
            let d = xi * u - 1.0;
            if d.norm() < 1e-300 {
                return None;
            }
            j += wt * (xi * u + 1.0) / d;
            zdj += wt * 2.0 * xi * u / (d * d);
        }
        let e = (-0.5 * beta * j).exp();
        Some((u * e, e * (1.0 + 0.5 * beta * zdj)))
    };
    let zero = Complex64::new(0.0, 0.0);
    continuation(g, zero, zero, 1.0 / w, ok)
}

/// Both sides of the exponential difference-quotient inequality
/// |(e^{w₁} − e^{w₂})/(w₁ − w₂)|² ≤ g(2 Re w₁) g(2 Re w₂), g(x) = (eˣ − 1)/x.
///
/// Returns `(lhs, rhs)` with the removable singularities filled in.
pub fn exp_difference_quotient(w1: Complex64, w2: Complex64) -> (f64, f64) {
    let d = w1 - w2;
    let q = if d.norm() == 0.0 { Complex64::new(1.0, 0.0) } else { complex_expm1(d) / d };
    let lhs = (w2.exp() * q).norm_sqr();
    let g = |x: f64| if x == 0.0 { 1.0 } else { x.exp_m1() / x };
    (lhs, g(2.0 * w1.re) * g(2.0 * w2.re))
}

fn complex_expm1(z: Complex64) -> Complex64 {
    let (sn, cs) = z.im.sin_cos();
    let half = (0.5 * z.im).sin();
    let cos_m1 = -2.0 * half * half;
    let em1 = z.re.exp_m1();
    Complex64::new(em1 * cs + cos_m1, (em1 + 1.0) * sn)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn radial_profile_examples() {
        let m = CircleMeasure::delta1();
        assert_eq!(radial_profile(&m, 4.0, PI), 1.0);
        let r = radial_profile(&m, 5.0, PI);
        assert!(r < 1.0);
        assert!((m.t_fn(Complex64::from_polar(r, PI)) - 5.0).abs() < 1e-9);
        let r = radial_profile(&m, 1.0, 0.3);
        assert!(r < 1.0 && (m.t_fn(Complex64::from_polar(r, 0.3)) - 1.0).abs() < 1e-9);
        assert_eq!(radial_profile(&m, 1.0, 2.5), 1.0);
    }

    #[test]
    fn support_arcs_for_delta1() {
        let (arcs, full) = support_arcs(&CircleMeasure::delta1(), 1.0);
        assert!(!full);
        assert_eq!(arcs.len(), 1);
        let (a, b) = arcs[0];
        assert!((a + b).abs() < 1e-12, "symmetric arc expected, got {a} {b}");
        let mid = radial_profile(&CircleMeasure::delta1(), 1.0, 0.5 * (a + b));
        assert!(mid < 1.0);
    }

    #[test]
    fn symmetric_measure_has_zero_imaginary_part_at_zero() {
        let prof = build_profile(&CircleMeasure::delta1(), BrownParams::new(2.0, c(1.5, 0.5)).unwrap(), 128).unwrap();
        let q = prof.point(0.0);
        assert!(q.i_s.abs() < 1e-14 && q.phi.abs() < 1e-14 && q.delta.abs() < 1e-14);
    }

    #[test]
    fn lift_wraps_by_two_pi() {
        let prof = build_profile(&CircleMeasure::four_points(), BrownParams::new(1.0, c(1.0, 0.5)).unwrap(), 128).unwrap();
        for &t in &[-3.0, -0.2, 1.7] {
            let a = prof.point(t);
            let b = prof.point(t + TAU);
            assert!((b.delta - a.delta - TAU).abs() < 1e-12);
            assert!((b.phi - a.phi - TAU).abs() < 1e-12);
        }
    }

    #[test]
    fn v_bounds_match_direct_images() {
        let m = CircleMeasure::delta1();
        let p = BrownParams::new(2.0, c(1.5, 0.5)).unwrap();
        let prof = build_profile(&m, p, 256).unwrap();
        let b = prof.v_bounds(0.0);
        let q = prof.point(b.theta);
        assert!((b.v2 - b.v1 + q.r_s.ln()).abs() < 1e-8);
        let beta = c(p.s(), 0.0) - p.tau();
        let inner = m.f_beta(beta, Complex64::from_polar(q.r_s, b.theta)).unwrap();
        let outer = m.f_beta(beta, Complex64::from_polar(1.0 / q.r_s, b.theta)).unwrap();
        assert!((SpiralCoords::from_lambda(&p, inner).v - b.v1).abs() < 1e-10);
        assert!((SpiralCoords::from_lambda(&p, outer).v - b.v2).abs() < 1e-10);
    }

    #[test]
    fn gap_strip_is_empty() {
        let prof = build_profile(&CircleMeasure::delta1(), BrownParams::new(1.0, c(1.0, 0.3)).unwrap(), 128).unwrap();
        let q = prof.point(PI - 0.01);
        assert_eq!(q.r_s, 1.0);
        let (v1, v2) = prof.strip_of(&q);
        assert_eq!(v1, v2);
    }

    #[test]
    fn contains_examples() {
        let m = CircleMeasure::delta1();
        let prof = build_profile(&m, BrownParams::new(1.0, c(1.0, 0.0)).unwrap(), 128).unwrap();
        let q = prof.point(0.2);
        let lam = Complex64::from_polar(0.5 * (q.r_s + 1.0), 0.2);
        assert_eq!(prof.contains(lam), Location::Inside);
        assert_eq!(prof.contains(c(50.0, 1.0)), Location::Outside);
        let prof2 = build_profile(&m, BrownParams::new(1.0, c(1.0, 0.5)).unwrap(), 128).unwrap();
        let q2 = prof2.point(0.3);
        assert_eq!(prof2.contains(prof2.boundary_image(&q2, Arc::Inner)), Location::Boundary);
    }

    #[test]
    fn inversion_round_trip_and_reflection() {
        let m = CircleMeasure::four_points();
        let beta = c(1.0, 0.0);
        for &w in &[c(0.3, 0.2), c(-0.5, 0.4), c(0.01, -0.8), c(0.9, 0.1)] {
            let z = invert_f_beta(&m, beta, w, InversionRegion::InsideDisk).unwrap();
            assert!((m.f_beta(beta, z).unwrap() - w).norm() < 1e-10);
            let zo = invert_f_beta(&m, beta, 1.0 / w.conj(), InversionRegion::OutsideDisk).unwrap();
            assert!((zo - 1.0 / z.conj()).norm() < 1e-9 * zo.norm());
        }
        assert_eq!(invert_f_beta(&m, beta, c(0.0, 0.0), InversionRegion::InsideDisk).unwrap(), c(0.0, 0.0));
    }

    #[test]
    fn outside_sigma_inversion() {
        let m = CircleMeasure::delta1();
        let p = BrownParams::new(1.0, c(1.0, 0.5)).unwrap();
        let prof = build_profile(&m, p, 256).unwrap();
        let beta = c(p.s(), 0.0) - p.tau();
        for &w in &[c(3.0, 1.0), c(0.1, 0.05), c(-1.0, 0.2), c(-0.3, -2.0)] {
            assert_eq!(prof.contains(w), Location::Outside);
            let z = invert_f_beta(&m, beta, w, InversionRegion::OutsideSigma(&prof)).unwrap();
            assert!((m.f_beta(beta, z).unwrap() - w).norm() < 1e-10 * w.norm().max(1.0));
            assert!(!prof.in_sigma_s(z, 0.0));
        }
    }

    #[test]
    fn diff_quotient_equality_case() {
        let w1 = c(0.7, 0.3);
        let (l, r) = exp_difference_quotient(w1, -w1.conj());
        assert!((l - r).abs() < 1e-12 * r);
        let (l, r) = exp_difference_quotient(c(0.2, 0.1), c(-1.0, 0.4));
        assert!(l < r);
    }
}
