//! Probability measures on the unit circle and the transforms J, f_β and T.
//!
//! A [`CircleMeasure`] is a finite collection of weighted atoms plus an
//! optional absolutely continuous part given by density nodes. The density
//! part is discretized by the periodic trapezoid rule when the measure is
//! built, so every integral against the measure is a finite sum.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Chordal distance below which a point is treated as lying on the support.
pub const SUPPORT_TOL: f64 = 1e-14;

/// Distance of |λ|² from 1 below which log(x)/(x − 1) uses its series.
pub const UNIT_CIRCLE_SWITCH: f64 = 1e-9;

/// Wraps an angle into `[−π, π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let mut t = (theta + PI).rem_euclid(TAU) - PI;
    if t >= PI {
        t -= TAU;
    }
    t
}

/// Chordal distance between two points of the Riemann sphere.
pub fn chordal_distance(z: Complex64, w: Complex64) -> f64 {
    2.0 * (z - w).norm() / ((1.0 + z.norm_sqr()) * (1.0 + w.norm_sqr())).sqrt()
}

/// One weighted atom `weight · δ_{e^{i angle}}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub angle: f64,
    pub weight: f64,
}

/// One node of a tabulated density (with respect to dθ/2π).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityNode {
    pub angle: f64,
    pub value: f64,
}

/// JSON form of a measure: `{"atoms":[{"angle","weight"}],"density":[{"angle","value"}]}`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MeasureSpec {
    #[serde(default)]
    pub atoms: Vec<Atom>,
    #[serde(default)]
    pub density: Vec<DensityNode>,
}

/// A probability measure μ₀ on the unit circle.
///
/// Atoms carry their own weight. Density nodes are turned into weighted
/// points with periodic trapezoid weights. The total mass is normalized to 1
/// on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct CircleMeasure {
    atoms: Vec<Atom>,
    density: Vec<DensityNode>,
    points: Vec<Complex64>,
    weights: Vec<f64>,
    angles: Vec<f64>,
}

impl CircleMeasure {
    /// Builds a measure from atoms and density nodes, normalizing the total mass.
    ///
    /// Angles are wrapped into `[−π, π)` and sorted. Duplicate atom angles,
    /// negative or non-finite weights and zero total mass are rejected.
    pub fn new(atoms: Vec<Atom>, density: Vec<DensityNode>) -> Result<Self> {
        let mut atoms: Vec<Atom> = atoms
            .into_iter()
            .map(|a| Atom { angle: wrap_angle(a.angle), weight: a.weight })
            .collect();
        let mut density: Vec<DensityNode> = density
            .into_iter()
            .map(|d| DensityNode { angle: wrap_angle(d.angle), value: d.value })
            .collect();
        for a in &atoms {
            if !a.angle.is_finite() || !a.weight.is_finite() || a.weight < 0.0 {
                return Err(Error::InvalidMeasure(format!("bad atom {:?}", a)));
            }
        }
        for d in &density {
            if !d.angle.is_finite() || !d.value.is_finite() || d.value < 0.0 {
                return Err(Error::InvalidMeasure(format!("bad density node {:?}", d)));
            }
        }
        atoms.sort_by(|x, y| x.angle.total_cmp(&y.angle));
        density.sort_by(|x, y| x.angle.total_cmp(&y.angle));
        if atoms.windows(2).any(|w| w[1].angle <= w[0].angle) {
            return Err(Error::InvalidMeasure("duplicate atom angle".into()));
        }
        if density.windows(2).any(|w| w[1].angle <= w[0].angle) {
            return Err(Error::InvalidMeasure("duplicate density node angle".into()));
        }
        if density.len() == 1 {
            return Err(Error::InvalidMeasure("a density needs at least two nodes".into()));
        }

        let mut angles = Vec::with_capacity(atoms.len() + density.len());
        let mut weights = Vec::with_capacity(atoms.len() + density.len());
        for a in &atoms {
            if a.weight > 0.0 {
                angles.push(a.angle);
                weights.push(a.weight);
            }
        }
        let nd = density.len();
        for k in 0..nd {
            let prev = if k == 0 { density[nd - 1].angle - TAU } else { density[k - 1].angle };
            let next = if k + 1 == nd { density[0].angle + TAU } else { density[k + 1].angle };
            let w = density[k].value * 0.5 * (next - prev) / TAU;
            if w > 0.0 {
                angles.push(density[k].angle);
                weights.push(w);
            }
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidMeasure("total mass is zero".into()));
        }
        for w in &mut weights {
            *w /= total;
        }
        for a in &mut atoms {
            a.weight /= total;
        }
        for d in &mut density {
            d.value /= total;
        }
        let points = angles.iter().map(|&t| Complex64::from_polar(1.0, t)).collect();
        Ok(Self { atoms, density, points, weights, angles })
    }

    /// Builds a measure from its JSON description.
    pub fn from_spec(spec: MeasureSpec) -> Result<Self> {
        Self::new(spec.atoms, spec.density)
    }

    /// Parses the JSON schema documented on [`MeasureSpec`].
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: MeasureSpec =
            serde_json::from_str(text).map_err(|e| Error::InvalidMeasure(e.to_string()))?;
        Self::from_spec(spec)
    }

    /// The JSON description of the normalized measure.
    pub fn to_spec(&self) -> MeasureSpec {
        MeasureSpec { atoms: self.atoms.clone(), density: self.density.clone() }
    }

    /// The point mass δ₁.
    pub fn delta1() -> Self {
        Self::new(vec![Atom { angle: 0.0, weight: 1.0 }], vec![]).expect("valid built-in measure")
    }

    /// Equal masses at 1, i, −1 and −i.
    pub fn four_points() -> Self {
        let atoms = [-PI, -PI / 2.0, 0.0, PI / 2.0]
            .iter()
            .map(|&angle| Atom { angle, weight: 0.25 })
            .collect();
        Self::new(atoms, vec![]).expect("valid built-in measure")
    }

    /// Looks up a built-in measure by name (`delta1` or `four_points`).
    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "delta1" => Some(Self::delta1()),
            "four_points" => Some(Self::four_points()),
            _ => None,
        }
    }

    /// Normalized atoms in increasing angle order.
    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    /// Normalized density nodes in increasing angle order.
    pub fn density_nodes(&self) -> &[DensityNode] {
        &self.density
    }

    /// Support points ξ_k = e^{iα_k} of the discretized measure.
    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    /// Weights of the support points; they sum to 1.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Angles α_k of the support points.
    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    /// Total mass of the discretized measure.
    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// True when the measure is invariant under complex conjugation.
    pub fn is_conjugation_symmetric(&self) -> bool {
        let n = self.angles.len();
        (0..n).all(|i| {
            let target = wrap_angle(-self.angles[i]);
            (0..n).any(|j| {
                (wrap_angle(self.angles[j] - target)).abs() < 1e-12
                    && (self.weights[j] - self.weights[i]).abs() < 1e-12
            })
        })
    }

    /// Smallest chordal distance from `z` to a support point.
    pub fn support_distance(&self, z: Complex64) -> f64 {
        self.points.iter().map(|&xi| chordal_distance(z, xi)).fold(f64::INFINITY, f64::min)
    }

    fn check_regular(&self, z: Complex64) -> Result<()> {
        if self.support_distance(z) < SUPPORT_TOL {
            Err(Error::SingularPoint(z))
        } else {
            Ok(())
        }
    }

    /// The Herglotz integral J(z) = ∫ (ξ + z)/(ξ − z) dμ₀(ξ).
    pub fn herglotz(&self, z: Complex64) -> Result<Complex64> {
        self.check_regular(z)?;
        Ok(self.herglotz_unchecked(z))
    }

    pub(crate) fn herglotz_unchecked(&self, z: Complex64) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for (&xi, &w) in self.points.iter().zip(&self.weights) {
            acc += w * (xi + z) / (xi - z);
        }
        acc
    }

    /// J(z) together with its complex derivative J′(z) = ∫ 2ξ/(ξ − z)² dμ₀.
    pub fn herglotz_with_derivative(&self, z: Complex64) -> Result<(Complex64, Complex64)> {
        self.check_regular(z)?;
        let mut j = Complex64::new(0.0, 0.0);
        let mut dj = Complex64::new(0.0, 0.0);
        for (&xi, &w) in self.points.iter().zip(&self.weights) {
            let d = xi - z;
            j += w * (xi + z) / d;
            dj += w * 2.0 * xi / (d * d);
        }
        Ok((j, dj))
    }

    /// f_β(z) = z · exp((β/2) J(z)).
    pub fn f_beta(&self, beta: Complex64, z: Complex64) -> Result<Complex64> {
        if beta == Complex64::new(0.0, 0.0) {
            return Ok(z);
        }
        Ok(z * (0.5 * beta * self.herglotz(z)?).exp())
    }

    /// f_β(z) and its derivative f_β′(z) = e^{βJ/2}(1 + (β/2) z J′(z)).
    pub fn f_beta_with_derivative(&self, beta: Complex64, z: Complex64) -> Result<(Complex64, Complex64)> {
        let (j, dj) = self.herglotz_with_derivative(z)?;
        let e = (0.5 * beta * j).exp();
        Ok((z * e, e * (1.0 + 0.5 * beta * z * dj)))
    }

    /// ∫ |λ − ξ|⁻² dμ₀(ξ), or `None` when λ lies on the support.
    pub fn inverse_square_integral(&self, lambda: Complex64) -> Option<f64> {
        if self.support_distance(lambda) < SUPPORT_TOL {
            return None;
        }
        Some(self.points.iter().zip(&self.weights).map(|(&xi, &w)| w / (lambda - xi).norm_sqr()).sum())
    }

    /// T(λ) = [log|λ|² / (|λ|² − 1)] · (∫ |λ − ξ|⁻² dμ₀)⁻¹.
    ///
    /// The bracket equals 1 on the unit circle. The value is 0 when the
    /// integral diverges and +∞ at λ = 0.
    pub fn t_fn(&self, lambda: Complex64) -> f64 {
        let x = lambda.norm_sqr();
        if x == 0.0 {
            return f64::INFINITY;
        }
        match self.inverse_square_integral(lambda) {
            None => 0.0,
            Some(g) => log_ratio(x) / g,
        }
    }

    /// T at `r e^{iθ}` with its partial derivatives in r and θ.
    ///
    /// Returns `None` on the support.
    pub fn t_fn_polar(&self, r: f64, theta: f64) -> Option<(f64, f64, f64)> {
        let lambda = Complex64::from_polar(r, theta);
        if self.support_distance(lambda) < SUPPORT_TOL {
            return None;
        }
        let mut g = 0.0;
        let mut g_r = 0.0;
        let mut g_t = 0.0;
        for (&alpha, &w) in self.angles.iter().zip(&self.weights) {
            let (sn, cs) = (theta - alpha).sin_cos();
            let d = r * r - 2.0 * r * cs + 1.0;
            let d2 = d * d;
            g += w / d;
            g_r -= w * (2.0 * r - 2.0 * cs) / d2;
            g_t -= w * 2.0 * r * sn / d2;
        }
        let x = r * r;
        let l = log_ratio(x);
        let dl = log_ratio_derivative(x);
        let t = l / g;
        let t_r = dl * 2.0 * r / g - l * g_r / (g * g);
        let t_t = -l * g_t / (g * g);
        Some((t, t_r, t_t))
    }

    /// The moment ∫ ξ^k dμ₀(ξ).
    pub fn star_moment(&self, k: i32) -> Complex64 {
        self.angles
            .iter()
            .zip(&self.weights)
            .map(|(&a, &w)| w * Complex64::from_polar(1.0, k as f64 * a))
            .sum()
    }
}

/// log(x)/(x − 1), with the value 1 at x = 1.
pub fn log_ratio(x: f64) -> f64 {
    let u = x - 1.0;
    if u.abs() < UNIT_CIRCLE_SWITCH {
        1.0 - u / 2.0 + u * u / 3.0
    } else {
        u.ln_1p() / u
    }
}

/// Derivative of [`log_ratio`].
pub fn log_ratio_derivative(x: f64) -> f64 {
    let u = x - 1.0;
    if u.abs() < 1e-4 {
        -0.5 + 2.0 * u / 3.0 - 0.75 * u * u + 0.8 * u * u * u
    } else {
        (u / x - u.ln_1p()) / (u * u)
    }
}

/// The pair (s, τ) of variance and covariance parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BrownParams {
    s: f64,
    tau: Complex64,
}

impl BrownParams {
    /// Relative slack allowed on the constraint |τ − s| ≤ s.
    pub const ADMISSIBILITY_SLACK: f64 = 1e-12;

    /// Validates s > 0, τ ≠ 0 and |τ − s| ≤ s.
    pub fn new(s: f64, tau: Complex64) -> Result<Self> {
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::InvalidParams(format!("s must be positive, got {s}")));
        }
        if !(tau.re.is_finite() && tau.im.is_finite()) || tau.norm() == 0.0 {
            return Err(Error::InvalidParams(format!("τ must be finite and nonzero, got {tau}")));
        }
        if (tau - s).norm() > s * (1.0 + Self::ADMISSIBILITY_SLACK) {
            return Err(Error::InvalidParams(format!("|τ − s| ≤ s fails for s = {s}, τ = {tau}")));
        }
        let p = Self { s, tau };
        let ratio = p.tau_sq_over_tau1();
        if !(ratio > 0.0 && ratio <= 2.0 * s * (1.0 + 1e-9)) {
            return Err(Error::InvalidParams(format!("|τ|²/τ₁ = {ratio} is outside (0, 2s]")));
        }
        Ok(p)
    }

    /// True when (s, τ) satisfies the admissibility constraints.
    pub fn is_admissible(s: f64, tau: Complex64) -> bool {
        Self::new(s, tau).is_ok()
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn tau(&self) -> Complex64 {
        self.tau
    }

    pub fn tau1(&self) -> f64 {
        self.tau.re
    }

    pub fn tau2(&self) -> f64 {
        self.tau.im
    }

    /// |τ|²/τ₁.
    pub fn tau_sq_over_tau1(&self) -> f64 {
        self.tau.norm_sqr() / self.tau.re
    }

    /// The coefficient (s − |τ|²/τ₁)/2 multiplying I_s in δ^{s,τ}.
    pub fn delta_coefficient(&self) -> f64 {
        0.5 * (self.s - self.tau_sq_over_tau1())
    }

    /// The same s with τ replaced by s.
    pub fn at_tau_equals_s(&self) -> Self {
        Self { s: self.s, tau: Complex64::new(self.s, 0.0) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn herglotz_examples() {
        let m = CircleMeasure::delta1();
        assert!((m.herglotz(c(0.0, 0.0)).unwrap() - c(1.0, 0.0)).norm() < 1e-15);
        assert!((m.herglotz(c(-1.0, 0.0)).unwrap()).norm() < 1e-15);
        assert!((m.herglotz(c(0.5, 0.0)).unwrap() - c(3.0, 0.0)).norm() < 1e-14);
        assert!(matches!(m.herglotz(c(1.0, 0.0)), Err(Error::SingularPoint(_))));
    }

    #[test]
    fn f_beta_examples() {
        let m = CircleMeasure::delta1();
        let z = c(0.3, -0.7);
        assert_eq!(m.f_beta(c(0.0, 0.0), z).unwrap(), z);
        let v = m.f_beta(c(1.0, 0.0), c(0.5, 0.0)).unwrap();
        assert!((v.re - 0.5 * 1.5f64.exp()).abs() < 1e-13 && v.im.abs() < 1e-15);
        let w = m.f_beta(c(2.5, 0.0), Complex64::from_polar(1.0, 1.1)).unwrap();
        assert!((w.norm() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn t_fn_examples() {
        let m = CircleMeasure::delta1();
        assert_eq!(m.t_fn(c(1.0, 0.0)), 0.0);
        assert!((m.t_fn(c(-1.0, 0.0)) - 4.0).abs() < 1e-14);
        let z = Complex64::from_polar(0.4, 0.9);
        let zr = Complex64::from_polar(1.0 / 0.4, 0.9);
        assert!((m.t_fn(z) - m.t_fn(zr)).abs() < 1e-12 * m.t_fn(z));
    }

    #[test]
    fn star_moment_examples() {
        assert!((CircleMeasure::delta1().star_moment(3) - c(1.0, 0.0)).norm() < 1e-15);
        assert!(CircleMeasure::four_points().star_moment(2).norm() < 1e-15);
        assert!((CircleMeasure::four_points().star_moment(0) - c(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn json_round_trip_normalizes() {
        let m = CircleMeasure::from_json(
            r#"{"atoms":[{"angle":0.0,"weight":2.0},{"angle":3.0,"weight":2.0}],
                "density":[{"angle":-2.0,"value":1.0},{"angle":1.0,"value":1.0},{"angle":2.0,"value":1.0}]}"#,
        )
        .unwrap();
        assert!((m.total_mass() - 1.0).abs() < 1e-12);
        let again = CircleMeasure::from_spec(m.to_spec()).unwrap();
        assert!((again.total_mass() - 1.0).abs() < 1e-12);
        assert_eq!(again.points().len(), m.points().len());
    }

    #[test]
    fn rejects_bad_measures() {
        assert!(CircleMeasure::new(vec![], vec![]).is_err());
        assert!(CircleMeasure::new(vec![Atom { angle: 0.0, weight: -1.0 }], vec![]).is_err());
        let dup = vec![Atom { angle: 0.0, weight: 1.0 }, Atom { angle: TAU, weight: 1.0 }];
        assert!(CircleMeasure::new(dup, vec![]).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(BrownParams::new(1.0, c(1.0, 0.5)).is_ok());
        assert!(BrownParams::new(1.0, c(1.0, 1.0)).is_ok());
        assert!(BrownParams::new(1.0, c(0.5, 1.0)).is_err());
        assert!(BrownParams::new(1.0, c(0.0, 0.0)).is_err());
        assert!(BrownParams::new(-1.0, c(1.0, 0.0)).is_err());
        let p = BrownParams::new(2.0, c(1.5, 0.5)).unwrap();
        assert!(p.tau_sq_over_tau1() <= 2.0 * p.s());
    }

    #[test]
    fn polar_derivatives_match_differences() {
        let m = CircleMeasure::four_points();
        let (r, t) = (0.63, 0.4);
        let h = 1e-6;
        let (_, tr, tt) = m.t_fn_polar(r, t).unwrap();
        let fr = (m.t_fn(Complex64::from_polar(r + h, t)) - m.t_fn(Complex64::from_polar(r - h, t))) / (2.0 * h);
        let ft = (m.t_fn(Complex64::from_polar(r, t + h)) - m.t_fn(Complex64::from_polar(r, t - h))) / (2.0 * h);
        assert!((tr - fr).abs() < 1e-6 * tr.abs().max(1.0));
        assert!((tt - ft).abs() < 1e-6 * tt.abs().max(1.0));
    }
}
