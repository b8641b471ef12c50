//! Hamilton–Jacobi characteristics for the regularized log potential
//!
//! S(s, τ, λ, ε) = tr log((ub_{s,τ} − λ)*(ub_{s,τ} − λ) + ε²).
//!
//! S solves ∂S/∂τ = (1/8)[1 − (1 − ε∂S/∂ε − 2λ∂S/∂λ)²] with initial data
//! S(s, 0, λ, ε) = ∫ log(|ξ − λ|² + ε²) dμ_s(ξ). Along the characteristics
//! λ(τ) = λ₀e^{τK/2}, ε(τ) = ε₀e^{Re(τK/2)} with K = ε₀p_{ε,0} + 2λ₀p_{λ,0} − 1
//! the value of S is known in closed form. [`HjSolver::evaluate_s`] finds the
//! initial point (λ₀, ε₀) that reaches a given (λ, ε) by Newton shooting.

use std::f64::consts::{PI, TAU};
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::brown_measure::locate;
use crate::circle_measure::{wrap_angle, BrownParams, CircleMeasure};
use crate::error::{Error, Result};
use crate::quadrature::{adaptive_simpson_relative, adaptive_simpson_with_floor, smoothstep};
use crate::spectral_domain::{build_profile, invert_f_beta, DomainProfile, InversionRegion, LiftedMap, Location};

/// Default absolute-or-relative accuracy of integrals against μ_s.
pub const DEFAULT_QUAD_TOL: f64 = 1e-10;

/// ε₀ below which shooting switches to the blow-up chart (φ, c, log ε₀).
pub const BLOWUP_SWITCH: f64 = 1e-3;

/// Max-norm of the shooting residual at which Newton stops.
pub const SHOOTING_TOL: f64 = 1e-13;

/// Largest final shooting residual that is still accepted.
pub const SHOOTING_ACCEPT: f64 = 1e-10;

/// Default number of base grid nodes of the profiles built here.
pub const DEFAULT_GRID: usize = 1024;

/// Density of μ_s below which the blow-up limits are refused.
pub const ZERO_DENSITY: f64 = 1e-12;

const TABLE_LEVEL: u32 = 14;
const TABLE_N: usize = 1 << TABLE_LEVEL;
const BASE_PANELS: usize = 64;
const MAX_DEPTH: u32 = 50;
const SCALE_PASS_TOL: f64 = 1e-3;
/// Relative jitter of 1/|ξ − λ₀|² per unit 1/|ξ − λ₀| from rounding in the node angle.
const NODE_NOISE: f64 = 8.0 * f64::EPSILON * std::f64::consts::PI;
const NEWTON_ITERATIONS: usize = 60;
const MAX_STEP: f64 = 2.0;

/// A point of a characteristic curve together with its initial data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CharState {
    pub lambda0: Complex64,
    pub eps0: f64,
    pub p_lambda0: Complex64,
    pub p_eps0: f64,
    pub lambda: Complex64,
    pub eps: f64,
    pub p_lambda: Complex64,
    pub p_eps: f64,
    /// The real-time Hamiltonian H^τ, constant along the curve.
    pub h0: f64,
}

/// S and its gradient at one point, with the initial data that reaches it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PotentialSample {
    pub s: f64,
    pub tau: Complex64,
    pub lambda: Complex64,
    pub eps: f64,
    pub s_value: f64,
    /// ∂S/∂λ = ½(∂S/∂x − i ∂S/∂y).
    pub grad_lambda: Complex64,
    /// ∂S/∂ε.
    pub grad_eps: f64,
    pub lambda0: Complex64,
    pub eps0: f64,
}

impl PotentialSample {
    /// (∂S/∂x, ∂S/∂y).
    pub fn grad_xy(&self) -> (f64, f64) {
        (2.0 * self.grad_lambda.re, -2.0 * self.grad_lambda.im)
    }
}

/// The real-time Hamiltonian H^τ = −τ₁/4 + Re[(τ/4)(εp_ε + 2λp_λ − 1)²].
pub fn hamiltonian(tau: Complex64, lambda: Complex64, eps: f64, p_lambda: Complex64, p_eps: f64) -> f64 {
    let k = eps * p_eps + 2.0 * lambda * p_lambda - 1.0;
    -0.25 * tau.re + (0.25 * tau * k * k).re
}

/// Closed-form transport of initial data along the characteristic to time τ.
pub fn transport(lambda0: Complex64, eps0: f64, p_lambda0: Complex64, p_eps0: f64, tau: Complex64) -> CharState {
    let k = eps0 * p_eps0 + 2.0 * lambda0 * p_lambda0 - 1.0;
    let half = 0.5 * tau * k;
    let e = half.exp();
    let er = half.re.exp();
    CharState {
        lambda0,
        eps0,
        p_lambda0,
        p_eps0,
        lambda: lambda0 * e,
        eps: eps0 * er,
        p_lambda: p_lambda0 / e,
        p_eps: p_eps0 / er,
        h0: hamiltonian(tau, lambda0, eps0, p_lambda0, p_eps0),
    }
}

#[derive(Debug, Clone)]
struct Piece {
    a: f64,
    b: f64,
    smooth: bool,
    table: Vec<(Complex64, f64)>,
}

/// Quadrature against μ_s, written as ∫ g(e^{iφ^s(θ)}) R_s(θ) φ^s′(θ) dθ/2π.
///
/// Each support arc of θ is mapped to t ∈ [0, 1] by a smoothstep (or
/// linearly when the support is the whole circle). Nodes at dyadic t down to
/// level 2⁻¹⁴ are tabulated once; deeper nodes are evaluated on demand.
#[derive(Debug, Clone)]
pub struct MuSQuadrature {
    prof: DomainProfile,
    pieces: Vec<Piece>,
}

impl MuSQuadrature {
    /// Tabulates the nodes for the μ₀ and s of `prof` (τ is irrelevant).
    pub fn new(prof: &DomainProfile) -> Self {
        let spans: Vec<(f64, f64, bool)> = if prof.full_support() {
            vec![(-PI, PI, false)]
        } else {
            prof.support_arcs().iter().map(|&(a, b)| (a, b, true)).collect()
        };
        let mut out = Self { prof: prof.clone(), pieces: Vec::new() };
        for (a, b, smooth) in spans {
            let mut piece = Piece { a, b, smooth, table: Vec::new() };
            piece.table = (0..=TABLE_N).into_par_iter().map(|k| out.eval(&piece, k as f64 / TABLE_N as f64)).collect();
            out.pieces.push(piece);
        }
        out
    }

    pub fn s(&self) -> f64 {
        self.prof.params().s()
    }

    fn eval(&self, piece: &Piece, t: f64) -> (Complex64, f64) {
        let (theta, jac) = if piece.smooth { smoothstep(piece.a, piece.b, t) } else { (piece.a + (piece.b - piece.a) * t, piece.b - piece.a) };
        let q = self.prof.point(theta);
        if !q.in_support() {
            return (Complex64::from_polar(1.0, q.phi), 0.0);
        }
        (Complex64::from_polar(1.0, q.phi), q.r_big * q.d_phi * jac / TAU)
    }

    fn node(&self, piece: &Piece, t: f64) -> (Complex64, f64) {
        let scaled = t * TABLE_N as f64;
        if scaled.fract() == 0.0 && scaled >= 0.0 && scaled <= TABLE_N as f64 {
            return piece.table[scaled as usize];
        }
        self.eval(piece, t)
    }

    fn focus_t(&self, piece: &Piece, phi: f64) -> Option<f64> {
        let theta = self.prof.invert_lifted(LiftedMap::Phi, phi);
        let lifted = piece.a + (theta - piece.a).rem_euclid(TAU);
        if !(lifted > piece.a && lifted < piece.b) {
            return None;
        }
        if !piece.smooth {
            return Some((lifted - piece.a) / (piece.b - piece.a));
        }
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..64 {
            let mid = 0.5 * (lo + hi);
            if smoothstep(piece.a, piece.b, mid).0 < lifted {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(0.5 * (lo + hi))
    }

    /// ∫ f dμ_s for a vector-valued f.
    ///
    /// Component k is accurate to `tol · max(1, ∫|f_k| dμ_s)`, where the
    /// scale comes from a first adaptive pass over |f_k| with a per-panel
    /// relative tolerance of 1e−3, above a floor too small to move a scale of 1.
    /// When `focus` is an angle φ, the panels are split at the node mapped to
    /// e^{iφ} so that a sharp peak there is always sampled. `noise` is the relative evaluation
    /// noise of f; refinement stops once Simpson differences fall below it.
    pub fn integrate<const K: usize, F>(&self, f: F, focus: Option<f64>, tol: f64, noise: f64) -> [f64; K]
    where
        F: Fn(Complex64) -> [f64; K],
    {
        let g = |piece: &Piece, t: f64| -> [f64; K] {
            let (xi, w) = self.node(piece, t);
            let mut out = [0.0; K];
            if w != 0.0 {
                let v = f(xi);
                for k in 0..K {
                    out[k] = v[k] * w;
                }
            }
            out
        };
        let mut panels: Vec<(usize, f64, f64)> = Vec::new();
        for (ip, piece) in self.pieces.iter().enumerate() {
            let mut breaks: Vec<f64> = (0..=BASE_PANELS).map(|k| k as f64 / BASE_PANELS as f64).collect();
            if let Some(t) = focus.and_then(|phi| self.focus_t(piece, phi)) {
                breaks.push(t);
                breaks.sort_by(f64::total_cmp);
                breaks.dedup();
            }
            for w in breaks.windows(2) {
                panels.push((ip, w[0], w[1]));
            }
        }
        let width: f64 = panels.iter().map(|&(_, a, b)| b - a).sum();
        let mut scale = [0.0f64; K];
        for &(ip, a, b) in &panels {
            let p = &self.pieces[ip];
            let part = adaptive_simpson_relative(
                |t| {
                    let mut v = g(p, t);
                    for x in v.iter_mut() {
                        *x = x.abs();
                    }
                    v
                },
                a,
                b,
                SCALE_PASS_TOL,
                1.0 / width,
                MAX_DEPTH,
            );
            for k in 0..K {
                scale[k] += part[k];
            }
        }
        for s in scale.iter_mut() {
            *s = s.max(1.0);
        }
        let mut total = [0.0; K];
        for &(ip, a, b) in &panels {
            let p = &self.pieces[ip];
            let part = adaptive_simpson_with_floor(
                |t| {
                    let mut v = g(p, t);
                    for k in 0..K {
                        v[k] /= scale[k];
                    }
                    v
                },
                a,
                b,
                tol * (b - a) / width,
                noise,
                MAX_DEPTH,
            );
            for k in 0..K {
                total[k] += part[k] * scale[k];
            }
        }
        total
    }
}

/// The integrals of μ_s that determine the initial momenta and their derivatives.
///
/// With ζ = ξ − λ₀ and D = |ζ|² + ε₀²: A = ∫1/D, B = ∫ζ̄/D, L = ∫log D,
/// C₁ = ∫1/D², C₂ = ∫ζ̄/D², C₃ = ∫ζ̄²/D².
#[derive(Debug, Clone, Copy, PartialEq)]
struct Integrals {
    a: f64,
    b: Complex64,
    log: f64,
    c1: f64,
    c2: Complex64,
    c3: Complex64,
}

impl Integrals {
    fn k(&self, lambda0: Complex64, eps0: f64) -> Complex64 {
        2.0 * eps0 * eps0 * self.a - 2.0 * lambda0 * self.b - 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Chart {
    Plain,
    BlowUp,
}

#[derive(Debug, Clone, Copy)]
struct Shot {
    lambda0: Complex64,
    eps0: f64,
    ints: Integrals,
    k: Complex64,
    g: [f64; 3],
}

impl Shot {
    fn norm(&self) -> f64 {
        self.g.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Evaluator of S and its derivatives for fixed μ₀ and (s, τ).
///
/// Integrals against μ_s depend only on (μ₀, s); they are shared between
/// solvers created with [`HjSolver::with_tau`].
#[derive(Debug, Clone)]
pub struct HjSolver {
    prof: DomainProfile,
    mus: Arc<MuSQuadrature>,
    quad_tol: f64,
}

impl HjSolver {
    pub fn new(m: &CircleMeasure, p: BrownParams) -> Result<Self> {
        Self::with_grid(m, p, DEFAULT_GRID)
    }

    pub fn with_grid(m: &CircleMeasure, p: BrownParams, n: usize) -> Result<Self> {
        Ok(Self::from_profile(build_profile(m, p, n)?))
    }

    pub fn from_profile(prof: DomainProfile) -> Self {
        let mus = Arc::new(MuSQuadrature::new(&prof));
        Self { prof, mus, quad_tol: DEFAULT_QUAD_TOL }
    }

    /// Same μ₀ and s, different τ. The μ_s quadrature table is shared.
    pub fn with_tau(&self, tau: Complex64) -> Result<Self> {
        Ok(Self { prof: self.prof.with_tau(tau)?, mus: Arc::clone(&self.mus), quad_tol: self.quad_tol })
    }

    pub fn with_quad_tol(mut self, tol: f64) -> Self {
        self.quad_tol = tol;
        self
    }

    pub fn profile(&self) -> &DomainProfile {
        &self.prof
    }

    pub fn params(&self) -> &BrownParams {
        self.prof.params()
    }

    pub fn mu_s(&self) -> &MuSQuadrature {
        &self.mus
    }

    fn integrals(&self, lambda0: Complex64, eps0: f64) -> Integrals {
        let e2 = eps0 * eps0;
        let focus = if lambda0.norm() > 0.0 { Some(lambda0.arg()) } else { None };
        let v = self.mus.integrate(
            |xi| {
                let z = xi - lambda0;
                let d = z.norm_sqr() + e2;
                let zb = z.conj();
                let inv = 1.0 / d;
                let inv2 = inv * inv;
                let b = zb * inv;
                let c2 = zb * inv2;
                let c3 = zb * zb * inv2;
                [inv, b.re, b.im, d.ln(), inv2, c2.re, c2.im, c3.re, c3.im]
            },
            focus,
            self.quad_tol,
            NODE_NOISE / (lambda0.norm() - 1.0).hypot(eps0),
        );
        Integrals {
            a: v[0],
            b: Complex64::new(v[1], v[2]),
            log: v[3],
            c1: v[4],
            c2: Complex64::new(v[5], v[6]),
            c3: Complex64::new(v[7], v[8]),
        }
    }

    /// True when λ₀ lies on the closed support of μ_s.
    fn on_support(&self, lambda0: Complex64) -> bool {
        if (lambda0.norm() - 1.0).abs() > 1e-12 {
            return false;
        }
        let theta = self.prof.invert_lifted(LiftedMap::Phi, lambda0.arg());
        self.prof.point(theta).r_s < 1.0
    }

    /// χ_s(λ₀) for λ₀ off the support of μ_s.
    pub fn chi_s(&self, lambda0: Complex64) -> Result<Complex64> {
        let beta = Complex64::new(self.prof.params().s(), 0.0);
        let m = self.prof.measure();
        if lambda0.norm() <= 1.0 {
            invert_f_beta(m, beta, lambda0, InversionRegion::InsideDisk)
        } else {
            invert_f_beta(m, beta, lambda0, InversionRegion::OutsideDisk)
        }
    }

    /// χ_{s−τ}(λ) for λ outside the closure of Σ_{s,τ}.
    pub fn chi_s_minus_tau(&self, lambda: Complex64) -> Result<Complex64> {
        let p = self.prof.params();
        let beta = Complex64::new(p.s(), 0.0) - p.tau();
        invert_f_beta(self.prof.measure(), beta, lambda, InversionRegion::OutsideSigma(&self.prof))
    }

    /// (p_{λ,0}, p_{ε,0}) = (∂S/∂λ, ∂S/∂ε) at τ = 0.
    ///
    /// For ε₀ > 0 these are −∫(ξ̄ − λ̄₀)/D dμ_s and 2ε₀∫1/D dμ_s with
    /// D = |ξ − λ₀|² + ε₀². For ε₀ = 0 and λ₀ ≠ 0 off the support,
    /// 2λ₀p_{λ,0} = 1 − J_{μ₀}(χ_s(λ₀)).
    pub fn initial_momenta(&self, lambda0: Complex64, eps0: f64) -> Result<(Complex64, f64)> {
        if !(eps0 >= 0.0) || !eps0.is_finite() {
            return Err(Error::InvalidArgument(format!("ε₀ = {eps0} must be a nonnegative number")));
        }
        if eps0 == 0.0 {
            if self.on_support(lambda0) {
                return Err(Error::SingularInitialPoint(lambda0));
            }
            if lambda0.norm() > 0.0 {
                let chi = self.chi_s(lambda0)?;
                let j = self.prof.measure().herglotz(chi)?;
                return Ok(((1.0 - j) / (2.0 * lambda0), 0.0));
            }
        }
        let ints = self.integrals(lambda0, eps0);
        Ok((-ints.b, 2.0 * eps0 * ints.a))
    }

    /// S(s, 0, λ₀, ε₀) = ∫ log(|ξ − λ₀|² + ε₀²) dμ_s(ξ).
    pub fn initial_potential(&self, lambda0: Complex64, eps0: f64) -> Result<f64> {
        if eps0 == 0.0 && self.on_support(lambda0) {
            return Err(Error::SingularInitialPoint(lambda0));
        }
        Ok(self.integrals(lambda0, eps0).log)
    }

    fn shot(&self, lambda0: Complex64, eps0: f64, target: (f64, f64, f64)) -> Shot {
        let ints = self.integrals(lambda0, eps0);
        let k = ints.k(lambda0, eps0);
        let half = 0.5 * self.prof.params().tau() * k;
        let g = [
            lambda0.norm().ln() + half.re - target.0,
            wrap_angle(lambda0.arg() + half.im - target.1),
            eps0.ln() + half.re - target.2,
        ];
        Shot { lambda0, eps0, ints, k, g }
    }

    /// Columns (dλ₀, dε₀) of the chart parametrization.
    fn chart_columns(chart: Chart, lambda0: Complex64, eps0: f64) -> [(Complex64, f64); 3] {
        let i = Complex64::new(0.0, 1.0);
        match chart {
            Chart::Plain => [(lambda0, 0.0), (i * lambda0, 0.0), (Complex64::new(0.0, 0.0), eps0)],
            Chart::BlowUp => {
                let e = Complex64::from_polar(1.0, lambda0.arg());
                let c = (lambda0.norm() - 1.0) / eps0;
                [(i * lambda0, 0.0), (eps0 * e, 0.0), (c * eps0 * e, eps0)]
            }
        }
    }

    fn jacobian(&self, s: &Shot, chart: Chart) -> [[f64; 3]; 3] {
        let (l, e, it) = (s.lambda0, s.eps0, &s.ints);
        let e2 = e * e;
        let k_l = 2.0 * e2 * it.c2 - 2.0 * it.b - 2.0 * l * it.c3;
        let k_lb = 2.0 * e2 * it.c2.conj() + 2.0 * l * e2 * it.c1;
        let k_e = 4.0 * e * it.a - 4.0 * e * e2 * it.c1 + 4.0 * e * l * it.c2;
        let tau = self.prof.params().tau();
        let mut jac = [[0.0; 3]; 3];
        for (col, (dl, de)) in Self::chart_columns(chart, l, e).into_iter().enumerate() {
            let dk = k_l * dl + k_lb * dl.conj() + k_e * de;
            let dlog = dl / l + 0.5 * tau * dk;
            jac[0][col] = dlog.re;
            jac[1][col] = dlog.im;
            jac[2][col] = de / e + (0.5 * tau * dk).re;
        }
        jac
    }

    fn apply(chart: Chart, lambda0: Complex64, eps0: f64, du: [f64; 3]) -> Option<(Complex64, f64)> {
        match chart {
            Chart::Plain => {
                let l = (Complex64::new(lambda0.norm().ln() + du[0], lambda0.arg() + du[1])).exp();
                Some((l, eps0 * du[2].exp()))
            }
            Chart::BlowUp => {
                let phi = lambda0.arg() + du[0];
                let c = (lambda0.norm() - 1.0) / eps0 + du[1];
                let e = eps0 * du[2].exp();
                let r = 1.0 + c * e;
                (r > 0.0).then(|| (Complex64::from_polar(r, phi), e))
            }
        }
    }

    fn newton(&self, seed: (Complex64, f64), target: (f64, f64, f64)) -> Option<Shot> {
        let (l0, e0) = seed;
        if !(e0 > 0.0 && e0.is_finite() && l0.norm() > 0.0 && l0.re.is_finite() && l0.im.is_finite()) {
            return None;
        }
        let mut cur = self.shot(l0, e0, target);
        for _ in 0..NEWTON_ITERATIONS {
            let n0 = cur.norm();
            if !n0.is_finite() {
                return None;
            }
            if n0 < SHOOTING_TOL {
                break;
            }
            let chart = if cur.eps0 < BLOWUP_SWITCH { Chart::BlowUp } else { Chart::Plain };
            let jac = self.jacobian(&cur, chart);
            let Some(mut du) = solve3(jac, [-cur.g[0], -cur.g[1], -cur.g[2]]) else { break };
            let big = du.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if big > MAX_STEP {
                for v in du.iter_mut() {
                    *v *= MAX_STEP / big;
                }
            }
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..12 {
                let step = [du[0] * alpha, du[1] * alpha, du[2] * alpha];
                if let Some((l, e)) = Self::apply(chart, cur.lambda0, cur.eps0, step) {
                    let trial = self.shot(l, e, target);
                    let nt = trial.norm();
                    if nt.is_finite() && (nt < n0 * (1.0 - 1e-4 * alpha) || nt < SHOOTING_TOL) {
                        cur = trial;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        (cur.norm() <= SHOOTING_ACCEPT).then_some(cur)
    }

    fn seeds(&self, lambda: Complex64, eps: f64) -> Vec<(Complex64, f64)> {
        let tau = self.prof.params().tau();
        let mut base: Option<(Complex64, f64)> = None;
        let loc = locate(&self.prof, lambda);
        if let Some(l) = loc.filter(|l| l.location != Location::Outside && l.v2 > l.v1) {
            let q = l.point;
            let t = ((l.coords.v - l.v1) / (l.v2 - l.v1)).clamp(1e-3, 1.0 - 1e-3);
            let u = 2.0 * t - 1.0;
            let c = u / (1.0 - u * u).sqrt();
            let k = Complex64::new(u * q.r_big, -q.i_s);
            let e0 = eps * (-(0.5 * tau * k).re).exp();
            base = Some((Complex64::from_polar((c * e0).exp(), q.phi), e0));
        } else if let Ok(chi) = self.chi_s_minus_tau(lambda) {
            let m = self.prof.measure();
            if let (Ok(l0), Ok(j)) = (m.f_beta(Complex64::new(self.prof.params().s(), 0.0), chi), m.herglotz(chi)) {
                let e0 = eps * ((0.5 * tau * j).re).exp();
                base = Some((l0, e0));
            }
        }
        let base = base.unwrap_or((lambda, eps));
        let mut fp = base;
        for _ in 0..4 {
            let ints = self.integrals(fp.0, fp.1);
            let half = 0.5 * tau * ints.k(fp.0, fp.1);
            let next = (lambda * (-half).exp(), eps * (-half.re).exp());
            if !(next.1 > 0.0 && next.1.is_finite() && next.0.re.is_finite() && next.0.im.is_finite()) {
                break;
            }
            fp = next;
        }
        let (l0, e0) = base;
        vec![
            base,
            fp,
            (l0, e0 * 4.0),
            (l0, e0 / 4.0),
            (l0, e0 * 20.0),
            (l0, e0 / 20.0),
            (l0 * (1.0 + eps), e0),
            (l0 * (1.0 - eps.min(0.5)), e0),
        ]
    }

    fn finish(&self, lambda: Complex64, eps: f64, shot: &Shot) -> PotentialSample {
        let tau = self.prof.params().tau();
        let p_lambda0 = -shot.ints.b;
        let p_eps0 = 2.0 * shot.eps0 * shot.ints.a;
        let st = transport(shot.lambda0, shot.eps0, p_lambda0, p_eps0, tau);
        let s_value = shot.ints.log + st.h0 + 0.5 * (tau * (shot.k + 1.0)).re;
        PotentialSample {
            s: self.prof.params().s(),
            tau,
            lambda,
            eps,
            s_value,
            grad_lambda: st.p_lambda,
            grad_eps: st.p_eps,
            lambda0: shot.lambda0,
            eps0: shot.eps0,
        }
    }

    /// S(s, τ, λ, ε) and its gradient by Newton shooting along characteristics.
    pub fn evaluate_s(&self, lambda: Complex64, eps: f64) -> Result<PotentialSample> {
        self.evaluate_s_seeded(lambda, eps, None)
    }

    /// [`HjSolver::evaluate_s`] trying an explicit initial point first.
    pub fn evaluate_s_seeded(&self, lambda: Complex64, eps: f64, seed: Option<(Complex64, f64)>) -> Result<PotentialSample> {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::InvalidArgument(format!("ε = {eps} must be positive")));
        }
        if !(lambda.re.is_finite() && lambda.im.is_finite()) {
            return Err(Error::InvalidArgument(format!("λ = {lambda} is not finite")));
        }
        if lambda.norm() == 0.0 {
            return self.evaluate_at_origin(eps);
        }
        let target = (lambda.norm().ln(), lambda.arg(), eps.ln());
        if let Some(sd) = seed {
            if let Some(shot) = self.newton(sd, target) {
                return Ok(self.finish(lambda, eps, &shot));
            }
        }
        for sd in self.seeds(lambda, eps) {
            if let Some(shot) = self.newton(sd, target) {
                return Ok(self.finish(lambda, eps, &shot));
            }
        }
        Err(Error::ShootingDiverged { lambda, eps })
    }

    /// λ = 0 forces λ₀ = 0, leaving a scalar equation for ε₀.
    fn evaluate_at_origin(&self, eps: f64) -> Result<PotentialSample> {
        let tau = self.prof.params().tau();
        let zero = Complex64::new(0.0, 0.0);
        let resid = |e0: f64| {
            let k = (e0 * e0 - 1.0) / (e0 * e0 + 1.0);
            e0.ln() + 0.5 * tau.re * k - eps.ln()
        };
        let mut eta = eps.ln();
        for _ in 0..200 {
            let e0 = eta.exp();
            let f = resid(e0);
            let dk = 4.0 * e0 * e0 / (e0 * e0 + 1.0).powi(2);
            let step = f / (1.0 + 0.5 * tau.re * dk);
            eta -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        let e0 = eta.exp();
        if resid(e0).abs() > SHOOTING_ACCEPT {
            return Err(Error::ShootingDiverged { lambda: zero, eps });
        }
        let ints = self.integrals(zero, e0);
        let shot = Shot { lambda0: zero, eps0: e0, ints, k: ints.k(zero, e0), g: [0.0; 3] };
        Ok(self.finish(zero, eps, &shot))
    }

    /// λ ∂S₀/∂λ = χ ∫ (χ − ξ)⁻¹ dμ₀(ξ) with χ = χ_{s−τ}(λ), for λ outside Σ̄_{s,τ}.
    pub fn s0_outside_gradient(&self, lambda: Complex64) -> Result<Complex64> {
        let chi = self.chi_s_minus_tau(lambda)?;
        let m = self.prof.measure();
        let sum: Complex64 = m.points().iter().zip(m.weights()).map(|(&xi, &w)| w / (chi - xi)).sum();
        Ok(chi * sum)
    }

    /// S₀(λ) = S(s, τ, λ, 0) outside Σ̄_{s,τ}, from the characteristic with ε₀ = 0.
    ///
    /// λ₀ = f_s(χ_{s−τ}(λ)) lies off the support of μ_s and
    /// S₀ = ∫ log|ξ − λ₀|² dμ_s + H^τ + ½Re[τ(K + 1)] with K = −J_{μ₀}(χ).
    pub fn s0_outside(&self, lambda: Complex64) -> Result<f64> {
        let chi = self.chi_s_minus_tau(lambda)?;
        let m = self.prof.measure();
        let tau = self.prof.params().tau();
        let lambda0 = m.f_beta(Complex64::new(self.prof.params().s(), 0.0), chi)?;
        let k = -m.herglotz(chi)?;
        let log = self.integrals(lambda0, 0.0).log;
        let h = -0.25 * tau.re + (0.25 * tau * k * k).re;
        Ok(log + h + 0.5 * (tau * (k + 1.0)).re)
    }

    /// The residual |∂S/∂τ − (1/8)[1 − (1 − εS_ε − 2λS_λ)²]| from centered differences.
    pub fn pde_residual_tau(&self, lambda: Complex64, eps: f64, h: f64) -> Result<f64> {
        let p = *self.prof.params();
        if !(h > 0.0) || eps <= h {
            return Err(Error::InvalidArgument(format!("need 0 < h < ε, got h = {h}, ε = {eps}")));
        }
        if (p.tau() - p.s()).norm() > p.s() - 2.0 * h {
            return Err(Error::InvalidArgument(format!("τ = {} is within 2h of |τ − s| = s", p.tau())));
        }
        let centre = self.evaluate_s(lambda, eps)?;
        let seed = Some((centre.lambda0, centre.eps0));
        let i = Complex64::new(0.0, 1.0);
        let at_tau = |d: Complex64| -> Result<f64> {
            Ok(self.with_tau(p.tau() + d)?.evaluate_s_seeded(lambda, eps, seed)?.s_value)
        };
        let at = |dl: Complex64, de: f64| -> Result<f64> { Ok(self.evaluate_s_seeded(lambda + dl, eps + de, seed)?.s_value) };
        let hc = Complex64::new(h, 0.0);
        let s_t1 = (at_tau(hc)? - at_tau(-hc)?) / (2.0 * h);
        let s_t2 = (at_tau(i * h)? - at_tau(-i * h)?) / (2.0 * h);
        let s_x = (at(hc, 0.0)? - at(-hc, 0.0)?) / (2.0 * h);
        let s_y = (at(i * h, 0.0)? - at(-i * h, 0.0)?) / (2.0 * h);
        let zero = Complex64::new(0.0, 0.0);
        let s_e = (at(zero, h)? - at(zero, -h)?) / (2.0 * h);
        let d_tau = 0.5 * Complex64::new(s_t1, -s_t2);
        let s_l = 0.5 * Complex64::new(s_x, -s_y);
        let q = 1.0 - eps * s_e - 2.0 * lambda * s_l;
        Ok((d_tau - 0.125 * (1.0 - q * q)).norm())
    }
}

/// Solves a 3×3 linear system by Gaussian elimination with partial pivoting.
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for c in 0..3 {
        let p = (c..3).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if !(a[p][c].abs() > 1e-300) {
            return None;
        }
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..3 {
            let f = a[r][c] / a[c][c];
            for k in c..3 {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = [0.0; 3];
    for c in (0..3).rev() {
        let mut v = b[c];
        for k in c + 1..3 {
            v -= a[c][k] * x[k];
        }
        x[c] = v / a[c][c];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// S(s, τ, λ, ε) for a one-off evaluation; builds the profile and quadrature.
pub fn evaluate_s(m: &CircleMeasure, p: BrownParams, lambda: Complex64, eps: f64) -> Result<PotentialSample> {
    HjSolver::new(m, p)?.evaluate_s(lambda, eps)
}

/// (∂S₀/∂v, ∂S₀/∂δ) = (2τ₁v + τ₁, (2τ₁/|τ|²)(φ^{s,τ}(δ) − δ)) inside Σ_{s,τ}.
pub fn s0_inside_gradients(prof: &DomainProfile, lambda: Complex64) -> Result<(f64, f64)> {
    let l = locate(prof, lambda).ok_or(Error::OutsideTarget(lambda))?;
    if l.location != Location::Inside {
        return Err(Error::OutsideTarget(lambda));
    }
    let p = prof.params();
    let t1 = p.tau1();
    Ok((2.0 * t1 * l.coords.v + t1, 2.0 * t1 / p.tau().norm_sqr() * (l.point.phi - l.coords.delta)))
}

/// Limits of (∂S/∂ρ, ∂S/∂θ) at τ = 0 along λ₀ = (1 + cε₀)e^{iφ}, ε₀ → 0⁺.
///
/// ∂S/∂ρ → 1 + (c/√(1 + c²)) m_s(φ) and ∂S/∂θ → I_s(θ) where φ^s(θ) = φ.
pub fn blowup_momenta(prof: &DomainProfile, phi: f64, c: f64) -> Result<(f64, f64)> {
    let theta = prof.invert_lifted(LiftedMap::Phi, phi);
    let q = prof.point(theta);
    if !q.in_support() || q.r_big < ZERO_DENSITY {
        return Err(Error::ZeroDensity(phi));
    }
    let u = if c.is_infinite() { c.signum() } else { c / (1.0 + c * c).sqrt() };
    Ok((1.0 + u * q.r_big, q.i_s))
}

/// The residual of ∂P/∂r = Re[(τ′/4)(1 − q²)] + s′Re[λ²P_λ² − λP_λ + (|λ|²/4)P_ε²],
/// q = 1 − εP_ε − 2λP_λ, for P(r) = S(s + rs′, τ + rτ′, λ, ε).
#[allow(clippy::too_many_arguments)]
pub fn pde_residual_r(
    m: &CircleMeasure,
    s: f64,
    tau: Complex64,
    s_dot: f64,
    tau_dot: Complex64,
    r: f64,
    lambda: Complex64,
    eps: f64,
    h: f64,
) -> Result<f64> {
    if !(h > 0.0) || eps <= h {
        return Err(Error::InvalidArgument(format!("need 0 < h < ε, got h = {h}, ε = {eps}")));
    }
    let at_r = |rr: f64| BrownParams::new(s + rr * s_dot, tau + rr * tau_dot);
    let centre = HjSolver::new(m, at_r(r)?)?;
    let solver_at = |rr: f64| -> Result<HjSolver> {
        if s_dot == 0.0 {
            centre.with_tau(tau + rr * tau_dot)
        } else {
            HjSolver::new(m, at_r(rr)?)
        }
    };
    let c = centre.evaluate_s(lambda, eps)?;
    let seed = Some((c.lambda0, c.eps0));
    let p_r = (solver_at(r + h)?.evaluate_s_seeded(lambda, eps, seed)?.s_value
        - solver_at(r - h)?.evaluate_s_seeded(lambda, eps, seed)?.s_value)
        / (2.0 * h);
    let i = Complex64::new(0.0, 1.0);
    let hc = Complex64::new(h, 0.0);
    let zero = Complex64::new(0.0, 0.0);
    let at = |dl: Complex64, de: f64| -> Result<f64> { Ok(centre.evaluate_s_seeded(lambda + dl, eps + de, seed)?.s_value) };
    let p_x = (at(hc, 0.0)? - at(-hc, 0.0)?) / (2.0 * h);
    let p_y = (at(i * h, 0.0)? - at(-i * h, 0.0)?) / (2.0 * h);
    let p_e = (at(zero, h)? - at(zero, -h)?) / (2.0 * h);
    let p_l = 0.5 * Complex64::new(p_x, -p_y);
    let q = 1.0 - eps * p_e - 2.0 * lambda * p_l;
    let rhs = (0.25 * tau_dot * (1.0 - q * q)).re
        + s_dot * (lambda * lambda * p_l * p_l - lambda * p_l + 0.25 * lambda.norm_sqr() * p_e * p_e).re;
    Ok((p_r - rhs).abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn delta1_solver(tau: Complex64) -> HjSolver {
        HjSolver::new(&CircleMeasure::delta1(), BrownParams::new(1.0, tau).unwrap()).unwrap()
    }

    #[test]
    fn mu_s_has_unit_mass() {
        let sol = delta1_solver(c(1.0, 0.0));
        let v = sol.mu_s().integrate(|_| [1.0], None, 1e-12, 0.0);
        assert!((v[0] - 1.0).abs() < 1e-10, "{}", v[0]);
        let four = HjSolver::new(&CircleMeasure::four_points(), BrownParams::new(0.3, c(0.3, 0.0)).unwrap()).unwrap();
        let v = four.mu_s().integrate(|_| [1.0], None, 1e-12, 0.0);
        assert!((v[0] - 1.0).abs() < 1e-10, "{}", v[0]);
    }

    #[test]
    fn jacobian_matches_differences() {
        let sol = delta1_solver(c(1.0, 0.3)).with_quad_tol(1e-13);
        let target = (0.1f64, 0.4f64, (0.2f64).ln());
        for chart in [Chart::Plain, Chart::BlowUp] {
            let (l0, e0) = (Complex64::from_polar(1.05, 0.3), 0.05);
            let base = sol.shot(l0, e0, target);
            let jac = sol.jacobian(&base, chart);
            let h = 1e-6;
            for col in 0..3 {
                let mut du = [0.0; 3];
                du[col] = h;
                let (lp, ep) = HjSolver::apply(chart, l0, e0, du).unwrap();
                du[col] = -h;
                let (lm, em) = HjSolver::apply(chart, l0, e0, du).unwrap();
                let (sp, sm) = (sol.shot(lp, ep, target), sol.shot(lm, em, target));
                for row in 0..3 {
                    let fd = (sp.g[row] - sm.g[row]) / (2.0 * h);
                    assert!((fd - jac[row][col]).abs() < 1e-5 * (1.0 + fd.abs()), "{chart:?} {row} {col}: {fd} vs {}", jac[row][col]);
                }
            }
        }
    }

    #[test]
    fn small_tau_matches_initial_potential() {
        let sol = delta1_solver(c(1e-9, 0.0));
        let l = c(0.4, 0.7);
        let direct = sol.initial_potential(l, 0.2).unwrap();
        let s = sol.evaluate_s(l, 0.2).unwrap();
        assert!((s.s_value - direct).abs() < 1e-8);
    }

    #[test]
    fn shooting_hits_target() {
        let sol = delta1_solver(c(1.0, 0.0));
        for (l, e) in [(c(0.3, 0.1), 0.1), (c(1.2, 0.5), 0.05), (c(-2.0, 0.1), 0.3), (c(1.0, 0.2), 1e-4)] {
            let s = sol.evaluate_s(l, e).unwrap();
            let (pl, pe) = sol.initial_momenta(s.lambda0, s.eps0).unwrap();
            let st = transport(s.lambda0, s.eps0, pl, pe, sol.params().tau());
            assert!((st.lambda - l).norm() < 1e-9, "{l} {}", st.lambda);
            assert!((st.eps - e).abs() < 1e-9 * e.max(1.0));
        }
    }

    #[test]
    fn origin_is_handled() {
        let sol = delta1_solver(c(1.0, 0.0));
        let s = sol.evaluate_s(c(0.0, 0.0), 0.5).unwrap();
        let t = sol.evaluate_s(c(1e-7, 0.0), 0.5).unwrap();
        assert!((s.s_value - t.s_value).abs() < 1e-6);
    }

    #[test]
    fn hamiltonian_examples() {
        let z = c(0.0, 0.0);
        let tau = c(0.7, 0.3);
        assert!(hamiltonian(tau, c(0.4, 0.1), 0.3, z, 0.0).abs() < 1e-15);
        let l = c(0.5, 0.0);
        let p = c(1.0, 0.0);
        assert!((hamiltonian(tau, l, 0.0, p, 0.0) + 0.25 * tau.re).abs() < 1e-15);
    }

    #[test]
    fn blowup_limits() {
        let sol = delta1_solver(c(1.0, 0.0));
        let prof = sol.profile();
        let (pin, pt) = blowup_momenta(prof, 0.3, f64::NEG_INFINITY).unwrap();
        let m = prof.mu_s_density(0.3);
        assert!((pin - (1.0 - m)).abs() < 1e-12);
        assert!((blowup_momenta(prof, 0.3, f64::INFINITY).unwrap().0 - (1.0 + m)).abs() < 1e-12);
        assert!((blowup_momenta(prof, 0.3, 0.0).unwrap().0 - 1.0).abs() < 1e-15);
        assert!((blowup_momenta(prof, 0.3, 5.0).unwrap().1 - pt).abs() < 1e-15);
        assert!(matches!(blowup_momenta(prof, PI, 0.0), Err(Error::ZeroDensity(_))));
    }
}
