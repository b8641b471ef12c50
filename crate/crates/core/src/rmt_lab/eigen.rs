//! Eigenvalues of dense complex matrices.
//!
//! The matrix is balanced, reduced to upper Hessenberg form by Householder
//! reflections and then driven to triangular form by single-shift complex QR
//! sweeps built from Givens rotations. Only eigenvalues are produced.

use faer::Mat;
use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};

/// Iteration budget per matrix dimension.
pub const ITERATIONS_PER_DIM: usize = 30;

/// Sweeps without deflation after which an exceptional shift is used.
const EXCEPTIONAL_SHIFT_PERIOD: usize = 10;

const RADIX: f64 = 2.0;

/// Row-major dense square matrix used internally by the solver.
struct Dense {
    n: usize,
    data: Vec<Complex64>,
}

impl Dense {
    fn from_faer(a: &Mat<Complex64>) -> Self {
        let n = a.nrows();
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(a[(i, j)]);
            }
        }
        Self { n, data }
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * self.n + j]
    }

    #[inline]
    fn at_mut(&mut self, i: usize, j: usize) -> &mut Complex64 {
        &mut self.data[i * self.n + j]
    }
}

#[inline]
fn abs1(z: Complex64) -> f64 {
    z.re.abs() + z.im.abs()
}

/// Diagonal similarity by powers of two equalising row and column norms.
fn balance(a: &mut Dense) {
    let n = a.n;
    let mut converged = false;
    while !converged {
        converged = true;
        for i in 0..n {
            let mut c = 0.0;
            let mut r = 0.0;
            for j in 0..n {
                if j != i {
                    c += abs1(a.at(j, i));
                    r += abs1(a.at(i, j));
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let total = c + r;
            let mut f = 1.0;
            let mut g = r / RADIX;
            while c < g {
                f *= RADIX;
                c *= RADIX * RADIX;
            }
            g = r * RADIX;
            while c > g {
                f /= RADIX;
                c /= RADIX * RADIX;
            }
            if (c + r / f) / f < 0.95 * total {
                converged = false;
                for j in 0..n {
                    *a.at_mut(i, j) /= f;
                    *a.at_mut(j, i) *= f;
                }
            }
        }
    }
}

/// In-place Householder reduction to upper Hessenberg form.
fn hessenberg(a: &mut Dense) {
    let n = a.n;
    if n < 3 {
        return;
    }
    let mut v = vec![Complex64::new(0.0, 0.0); n];
    for k in 0..n - 2 {
        let norm: f64 = (k + 1..n).map(|i| a.at(i, k).norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let x0 = a.at(k + 1, k);
        let phase = if x0.norm() == 0.0 { Complex64::new(1.0, 0.0) } else { x0 / x0.norm() };
        let alpha = -phase * norm;
        for i in k + 1..n {
            v[i] = a.at(i, k);
        }
        v[k + 1] -= alpha;
        let vnorm2: f64 = (k + 1..n).map(|i| v[i].norm_sqr()).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        let scale = 2.0 / vnorm2;
        for j in k..n {
            let mut dot = Complex64::new(0.0, 0.0);
            for i in k + 1..n {
                dot += v[i].conj() * a.at(i, j);
            }
            dot *= scale;
            for i in k + 1..n {
                let vi = v[i];
                *a.at_mut(i, j) -= vi * dot;
            }
        }
        for i in 0..n {
            let mut dot = Complex64::new(0.0, 0.0);
            for j in k + 1..n {
                dot += a.at(i, j) * v[j];
            }
            dot *= scale;
            for j in k + 1..n {
                let vj = v[j].conj();
                *a.at_mut(i, j) -= dot * vj;
            }
        }
        *a.at_mut(k + 1, k) = alpha;
        for i in k + 2..n {
            *a.at_mut(i, k) = Complex64::new(0.0, 0.0);
        }
    }
}

/// Rotation `[[c, s], [−s̄, c]]` mapping `(f, g)` to `(ρ, 0)`.
fn givens(f: Complex64, g: Complex64) -> (f64, Complex64) {
    let fa = f.norm();
    let ga = g.norm();
    if ga == 0.0 {
        return (1.0, Complex64::new(0.0, 0.0));
    }
    if fa == 0.0 {
        return (0.0, g.conj() / ga);
    }
    let r = fa.hypot(ga);
    (fa / r, (f / fa) * g.conj() / r)
}

/// Eigenvalue of the trailing 2×2 block closest to its last diagonal entry.
fn wilkinson_shift(a: Complex64, b: Complex64, c: Complex64, d: Complex64) -> Complex64 {
    let half = (a - d) * 0.5;
    let disc = (half * half + b * c).sqrt();
    let mid = (a + d) * 0.5;
    let mu1 = mid + disc;
    let mu2 = mid - disc;
    if (mu1 - d).norm() <= (mu2 - d).norm() {
        mu1
    } else {
        mu2
    }
}

/// Eigenvalues of a Hessenberg matrix by shifted QR with deflation.
fn hessenberg_qr(h: &mut Dense) -> Result<Vec<Complex64>> {
    let n = h.n;
    let mut eig = vec![Complex64::new(0.0, 0.0); n];
    let budget = ITERATIONS_PER_DIM * n.max(1);
    let mut total = 0usize;
    let mut since_deflation = 0usize;
    let mut rotations: Vec<(f64, Complex64)> = Vec::with_capacity(n);
    let mut hi = n - 1;
    while hi > 0 {
        let mut lo = hi;
        while lo > 0 {
            let sub = h.at(lo, lo - 1);
            let scale = abs1(h.at(lo - 1, lo - 1)) + abs1(h.at(lo, lo));
            if abs1(sub) <= f64::EPSILON * scale || abs1(sub) < f64::MIN_POSITIVE {
                *h.at_mut(lo, lo - 1) = Complex64::new(0.0, 0.0);
                break;
            }
            lo -= 1;
        }
        if lo == hi {
            eig[hi] = h.at(hi, hi);
            hi -= 1;
            since_deflation = 0;
            continue;
        }
        if total >= budget {
            return Err(Error::NoConvergence { method: "complex QR", iterations: total });
        }
        total += 1;
        since_deflation += 1;
        let mu = if since_deflation.is_multiple_of(EXCEPTIONAL_SHIFT_PERIOD) {
            h.at(hi, hi) + 0.75 * h.at(hi, hi - 1).norm()
        } else {
            wilkinson_shift(h.at(hi - 1, hi - 1), h.at(hi - 1, hi), h.at(hi, hi - 1), h.at(hi, hi))
        };
        for i in lo..=hi {
            *h.at_mut(i, i) -= mu;
        }
        rotations.clear();
        for k in lo..hi {
            let (c, s) = givens(h.at(k, k), h.at(k + 1, k));
            rotations.push((c, s));
            for j in k..=hi {
                let x = h.at(k, j);
                let y = h.at(k + 1, j);
                *h.at_mut(k, j) = c * x + s * y;
                *h.at_mut(k + 1, j) = -s.conj() * x + c * y;
            }
        }
        for (offset, &(c, s)) in rotations.iter().enumerate() {
            let k = lo + offset;
            let last = (k + 2).min(hi);
            for i in lo..=last {
                let x = h.at(i, k);
                let y = h.at(i, k + 1);
                *h.at_mut(i, k) = x * c + y * s.conj();
                *h.at_mut(i, k + 1) = -x * s + y * c;
            }
        }
        for i in lo..=hi {
            *h.at_mut(i, i) += mu;
        }
    }
    eig[0] = h.at(0, 0);
    Ok(eig)
}

/// All eigenvalues of a dense complex matrix.
pub fn eigenvalues(a: &Mat<Complex64>) -> Result<Vec<Complex64>> {
    if a.nrows() != a.ncols() {
        return Err(Error::InvalidArgument(format!("matrix is {}×{}, not square", a.nrows(), a.ncols())));
    }
    if a.nrows() == 0 {
        return Ok(Vec::new());
    }
    let mut d = Dense::from_faer(a);
    if d.data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::InvalidArgument("matrix has non-finite entries".into()));
    }
    balance(&mut d);
    hessenberg(&mut d);
    hessenberg_qr(&mut d)
}

/// Smallest singular value of `a − λI`, normalised by the Frobenius norm of `a`,
/// maximised over `probes` randomly chosen eigenvalues.
///
/// Each singular value is estimated by inverse iteration on `(a − λI)^*(a − λI)`.
pub fn residual_certificate<R: Rng>(a: &Mat<Complex64>, eig: &[Complex64], probes: usize, rng: &mut R) -> f64 {
    let n = a.nrows();
    let norm = a.norm_l2().max(f64::MIN_POSITIVE);
    let mut worst: f64 = 0.0;
    for _ in 0..probes.min(eig.len()) {
        let lambda = eig[rng.random_range(0..eig.len())];
        let shifted = Mat::from_fn(n, n, |i, j| if i == j { a[(i, j)] - lambda } else { a[(i, j)] });
        let lu = shifted.partial_piv_lu();
        let adj = shifted.adjoint().to_owned().partial_piv_lu();
        let mut x = Mat::from_fn(n, 1, |_, _| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
        let mut sigma = f64::INFINITY;
        for _ in 0..3 {
            let xn = x.norm_l2();
            if xn == 0.0 || !xn.is_finite() {
                break;
            }
            x /= faer::Scale(Complex64::new(xn, 0.0));
            let y = faer::linalg::solvers::Solve::solve(&adj, &x);
            let z = faer::linalg::solvers::Solve::solve(&lu, &y);
            let zn = z.norm_l2();
            if !zn.is_finite() || zn == 0.0 {
                sigma = 0.0;
                break;
            }
            sigma = (1.0 / zn).sqrt();
            x = z;
        }
        worst = worst.max(sigma / norm);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sorted(mut v: Vec<Complex64>) -> Vec<Complex64> {
        v.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap().then(a.im.partial_cmp(&b.im).unwrap()));
        v
    }

    #[test]
    fn diagonal_is_recovered() {
        let d = [Complex64::new(1.0, 2.0), Complex64::new(-3.0, 0.5), Complex64::new(0.0, -1.0)];
        let a = Mat::from_fn(3, 3, |i, j| if i == j { d[i] } else { Complex64::new(0.0, 0.0) });
        let e = sorted(eigenvalues(&a).unwrap());
        let expect = sorted(d.to_vec());
        for (x, y) in e.iter().zip(&expect) {
            assert!((x - y).norm() < 1e-14);
        }
    }

    #[test]
    fn companion_of_cubic() {
        let a = Mat::from_fn(3, 3, |i, j| match (i, j) {
            (0, 2) => Complex64::new(1.0, 0.0),
            (1, 0) | (2, 1) => Complex64::new(1.0, 0.0),
            _ => Complex64::new(0.0, 0.0),
        });
        let e = eigenvalues(&a).unwrap();
        for k in 0..3 {
            let root = Complex64::from_polar(1.0, std::f64::consts::TAU * k as f64 / 3.0);
            let best = e.iter().map(|z| (z - root).norm()).fold(f64::INFINITY, f64::min);
            assert!(best < 1e-10, "root {root} missed by {best}");
        }
    }

    #[test]
    fn triangular_matrix() {
        let a = Mat::from_fn(6, 6, |i, j| {
            if j >= i {
                Complex64::new(1.0 + i as f64, j as f64 - 0.3)
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        let e = eigenvalues(&a).unwrap();
        for i in 0..6 {
            let d = a[(i, i)];
            assert!(e.iter().any(|z| (z - d).norm() < 1e-10));
        }
    }
}
