//! Finite-N random-matrix laboratory.
//!
//! Simulates `U^N B^N_{s,τ}` by discretizing the matrix SDE
//! `dB = B (i dW − ½(s − τ) dr)` with `W = e^{iθ₀}(aX + ibY)` built from two
//! independent Hermitian Brownian motions, and compares eigenvalues,
//! regularized log potentials and ∗-moments with the deterministic modules.
//!
//! Every sample owns a counter-based ChaCha stream derived from the seed and
//! the sample index, so results do not depend on the number of worker threads.
//! `BROWNLAB_THREADS` caps the worker count.
//!
//! Estimators of expectations support weak Richardson extrapolation: each
//! sample is simulated with `steps` and `steps/2` steps driven by the same
//! Brownian path, and `2 f(fine) − f(coarse)` cancels the O(Δr) bias of the
//! time discretization.

pub mod eigen;

use faer::{Accum, Mat, Par, Side};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::brown_measure::{self, Bounds};
use crate::circle_measure::{BrownParams, CircleMeasure};
use crate::error::{Error, Result};
use crate::moment_engine::StarWord;
use crate::spectral_domain::{DomainProfile, Location};

pub use eigen::eigenvalues;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "BROWNLAB_THREADS";

/// Dilation of the strip width used when classifying eigenvalues.
pub const CONTAINMENT_DILATION: f64 = 1.05;

/// Degree of the Taylor polynomial used by the matrix exponential.
const EXP_TAYLOR_DEGREE: usize = 12;

/// Stream tags separating the random inputs of one sample.
const STREAM_UNITARY: u64 = 0;
const STREAM_FIRST: u64 = 1;
const STREAM_SECOND: u64 = 2;
const STREAMS_PER_SAMPLE: u64 = 4;

/// Time discretization of the matrix SDE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// `b ← b (I + iΔW − ½(s − τ)Δr)`.
    Euler,
    /// `b ← b exp(iΔW)`; the Itô drift is generated by the exponential itself.
    Exponential,
}

/// Parameters of a Monte-Carlo run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub steps: usize,
    pub samples: usize,
    pub seed: u64,
    pub scheme: Scheme,
    /// Combine the `steps` and `steps/2` runs to cancel the first-order bias.
    pub extrapolate: bool,
}

impl SimConfig {
    /// Euler scheme with extrapolation switched on.
    pub fn new(n: usize, steps: usize, samples: usize, seed: u64) -> Result<Self> {
        let cfg = Self { n, steps, samples, seed, scheme: Scheme::Euler, extrapolate: true };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_extrapolation(mut self, on: bool) -> Self {
        self.extrapolate = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidArgument(format!("matrix size {} must be at least 2", self.n)));
        }
        if self.steps < 10 {
            return Err(Error::InvalidArgument(format!("{} steps is below the minimum of 10", self.steps)));
        }
        if self.samples == 0 {
            return Err(Error::InvalidArgument("at least one sample is required".into()));
        }
        if self.extrapolate && !self.steps.is_multiple_of(2) {
            return Err(Error::InvalidArgument("extrapolation needs an even number of steps".into()));
        }
        Ok(())
    }
}

/// Coefficients of `W = e^{iθ₀}(aX + ibY)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SdeParams {
    pub theta0: f64,
    pub a: f64,
    pub b: f64,
}

/// Checks `s > 0` and `|τ − s| ≤ s`, allowing `τ = 0` (unitary Brownian motion).
fn check_sde_params(s: f64, tau: Complex64) -> Result<()> {
    if !(s > 0.0) || !s.is_finite() || !tau.re.is_finite() || !tau.im.is_finite() {
        return Err(Error::InvalidParams(format!("s = {s}, τ = {tau}")));
    }
    if (tau - s).norm() > s * (1.0 + BrownParams::ADMISSIBILITY_SLACK) {
        return Err(Error::InvalidParams(format!("|τ − s| = {} exceeds s = {s}", (tau - s).norm())));
    }
    Ok(())
}

/// θ₀ = ½arg(s − τ), a = √((s + |τ − s|)/2), b = √((s − |τ − s|)/2).
pub fn sde_params(s: f64, tau: Complex64) -> Result<SdeParams> {
    check_sde_params(s, tau)?;
    let diff = Complex64::new(s, 0.0) - tau;
    let r = diff.norm().min(s);
    let theta0 = if r == 0.0 { 0.0 } else { 0.5 * diff.arg() };
    Ok(SdeParams { theta0, a: ((s + r) / 2.0).sqrt(), b: ((s - r) / 2.0).max(0.0).sqrt() })
}

/// Gaussian Hermitian matrix with `E[(1/N)Tr ΔX²] = dt`.
pub fn hermitian_increment<R: Rng>(n: usize, dt: f64, rng: &mut R) -> Mat<Complex64> {
    let diag = (dt / n as f64).sqrt();
    let off = (dt / (2.0 * n as f64)).sqrt();
    let mut m = Mat::<Complex64>::zeros(n, n);
    for i in 0..n {
        let x: f64 = StandardNormal.sample(rng);
        m[(i, i)] = Complex64::new(diag * x, 0.0);
        for j in i + 1..n {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            let z = Complex64::new(off * re, off * im);
            m[(i, j)] = z;
            m[(j, i)] = z.conj();
        }
    }
    m
}

/// Generator `iΔW` of one step.
fn step_generator<R: Rng>(n: usize, dt: f64, p: &SdeParams, rng: &mut R) -> Mat<Complex64> {
    let x = hermitian_increment(n, dt, rng);
    let y = if p.b > 0.0 { Some(hermitian_increment(n, dt, rng)) } else { None };
    let phase = Complex64::from_polar(1.0, p.theta0) * Complex64::i();
    Mat::from_fn(n, n, |i, j| {
        let mut w = x[(i, j)] * p.a;
        if let Some(y) = &y {
            w += Complex64::i() * p.b * y[(i, j)];
        }
        phase * w
    })
}

fn product(a: &Mat<Complex64>, b: &Mat<Complex64>) -> Mat<Complex64> {
    let mut out = Mat::<Complex64>::zeros(a.nrows(), b.ncols());
    faer::linalg::matmul::matmul(&mut out, Accum::Replace, a, b, Complex64::new(1.0, 0.0), Par::Seq);
    out
}

/// Matrix exponential by scaling, Taylor expansion and squaring.
pub fn expm(x: &Mat<Complex64>) -> Mat<Complex64> {
    let n = x.nrows();
    let norm = (0..n)
        .map(|j| (0..n).map(|i| x[(i, j)].norm()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut squarings = 0u32;
    let mut scale = 1.0;
    while norm * scale > 0.5 {
        scale *= 0.5;
        squarings += 1;
    }
    let xs = Mat::from_fn(n, n, |i, j| x[(i, j)] * scale);
    let mut acc = Mat::<Complex64>::identity(n, n);
    for k in (1..=EXP_TAYLOR_DEGREE).rev() {
        let mut next = product(&xs, &acc);
        next /= faer::Scale(Complex64::new(k as f64, 0.0));
        for i in 0..n {
            next[(i, i)] += 1.0;
        }
        acc = next;
    }
    for _ in 0..squarings {
        acc = product(&acc, &acc);
    }
    acc
}

/// Right-multiplies `b` by one step factor with generator `g` over `dt`.
fn advance(b: &Mat<Complex64>, g: &Mat<Complex64>, drift: Complex64, scheme: Scheme) -> Mat<Complex64> {
    match scheme {
        Scheme::Euler => {
            let mut out = b.clone();
            let mut factor = g.clone();
            for i in 0..factor.nrows() {
                factor[(i, i)] += drift;
            }
            faer::linalg::matmul::matmul(&mut out, Accum::Add, b, &factor, Complex64::new(1.0, 0.0), Par::Seq);
            out
        }
        Scheme::Exponential => product(b, &expm(g)),
    }
}

/// Fine path and, when requested, the coarse path driven by the same increments.
fn drive(cfg: &SimConfig, s: f64, tau: Complex64, rng: &mut ChaCha8Rng, coarse: bool) -> Result<(Mat<Complex64>, Option<Mat<Complex64>>)> {
    let p = sde_params(s, tau)?;
    let n = cfg.n;
    let dt = 1.0 / cfg.steps as f64;
    let drift_rate = -0.5 * (Complex64::new(s, 0.0) - tau);
    let mut fine = Mat::<Complex64>::identity(n, n);
    let mut slow = if coarse { Some(Mat::<Complex64>::identity(n, n)) } else { None };
    let mut pending: Option<Mat<Complex64>> = None;
    for _ in 0..cfg.steps {
        let g = step_generator(n, dt, &p, rng);
        fine = advance(&fine, &g, drift_rate * dt, cfg.scheme);
        if let Some(c) = slow.as_mut() {
            match pending.take() {
                None => pending = Some(g),
                Some(prev) => {
                    let sum = &prev + &g;
                    *c = advance(c, &sum, drift_rate * (2.0 * dt), cfg.scheme);
                }
            }
        }
    }
    Ok((fine, slow))
}

/// RNG for one stream of one sample.
fn sample_rng(seed: u64, sample: usize, tag: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(sample as u64 * STREAMS_PER_SAMPLE + tag);
    rng
}

/// One simulated `b_{s,τ}(1)` for sample index `sample`.
pub fn simulate_b(cfg: &SimConfig, s: f64, tau: Complex64, sample: usize) -> Result<Mat<Complex64>> {
    cfg.validate()?;
    let mut rng = sample_rng(cfg.seed, sample, STREAM_FIRST);
    Ok(drive(cfg, s, tau, &mut rng, false)?.0)
}

/// Fine and half-step coarse paths of `b_{s,τ}(1)` sharing one Brownian path.
pub fn simulate_b_pair(cfg: &SimConfig, s: f64, tau: Complex64, sample: usize) -> Result<(Mat<Complex64>, Mat<Complex64>)> {
    cfg.validate()?;
    if !cfg.steps.is_multiple_of(2) {
        return Err(Error::InvalidArgument("a coupled coarse path needs an even number of steps".into()));
    }
    let mut rng = sample_rng(cfg.seed, sample, STREAM_FIRST);
    let (fine, coarse) = drive(cfg, s, tau, &mut rng, true)?;
    Ok((fine, coarse.expect("coarse path requested")))
}

/// Haar unitary from the QR factorization of a Ginibre matrix with the phases of R removed.
pub fn haar_unitary<R: Rng>(n: usize, rng: &mut R) -> Mat<Complex64> {
    let g = Mat::from_fn(n, n, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        Complex64::new(re, im)
    });
    let qr = g.qr();
    let mut q = qr.compute_Q();
    let r = qr.R();
    for j in 0..n {
        let d = r[(j, j)];
        let phase = if d.norm() == 0.0 { Complex64::new(1.0, 0.0) } else { d / d.norm() };
        for i in 0..n {
            q[(i, j)] *= phase;
        }
    }
    q
}

/// Multiplicities of the atoms of `m` at size `n` by largest remainders.
pub fn multiplicities(m: &CircleMeasure, n: usize) -> Vec<usize> {
    let w = m.weights();
    let raw: Vec<f64> = w.iter().map(|x| x * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..w.len()).collect();
    order.sort_by(|&i, &j| (raw[j] - raw[j].floor()).total_cmp(&(raw[i] - raw[i].floor())).then(i.cmp(&j)));
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Diagonal angles of `U` before conjugation.
pub fn unitary_angles(m: &CircleMeasure, n: usize) -> Vec<f64> {
    let counts = multiplicities(m, n);
    m.angles().iter().zip(&counts).flat_map(|(&a, &c)| std::iter::repeat_n(a, c)).collect()
}

/// `U = Q D Q*` with eigenvalue angles from `m` and Haar `Q`.
pub fn initial_unitary<R: Rng>(m: &CircleMeasure, n: usize, rng: &mut R) -> Mat<Complex64> {
    let angles = unitary_angles(m, n);
    let q = haar_unitary(n, rng);
    let qd = Mat::from_fn(n, n, |i, j| q[(i, j)] * Complex64::from_polar(1.0, angles[j]));
    product(&qd, &q.adjoint().to_owned())
}

/// Runs `f` on a pool honouring `BROWNLAB_THREADS`.
pub fn with_threads<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    match std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()).filter(|&k| k > 0) {
        Some(k) => match rayon::ThreadPoolBuilder::new().num_threads(k).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        },
        None => f(),
    }
}

/// Sample mean and standard error of a sequence of reals.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Eigenvalues of all samples, tagged with the sample index.
#[derive(Debug, Clone, Default, Serialize)]
pub struct EigCloud {
    pub n: usize,
    pub points: Vec<(Complex64, usize)>,
}

impl EigCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn samples(&self) -> usize {
        self.points.iter().map(|p| p.1 + 1).max().unwrap_or(0)
    }

    /// CSV rows `x,y,sample_index`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,sample_index\n");
        for (z, k) in &self.points {
            out.push_str(&format!("{:.12e},{:.12e},{}\n", z.re, z.im, k));
        }
        out
    }
}

/// Simulates `U B_{s,τ}` for every sample and collects the eigenvalues.
pub fn simulate_eigenvalues(cfg: &SimConfig, m: &CircleMeasure, s: f64, tau: Complex64) -> Result<EigCloud> {
    cfg.validate()?;
    check_sde_params(s, tau)?;
    let per_sample: Vec<Result<Vec<Complex64>>> = with_threads(|| {
        (0..cfg.samples)
            .into_par_iter()
            .map(|k| {
                let mut urng = sample_rng(cfg.seed, k, STREAM_UNITARY);
                let u = initial_unitary(m, cfg.n, &mut urng);
                let b = simulate_b(cfg, s, tau, k)?;
                eigenvalues(&product(&u, &b))
            })
            .collect()
    });
    let mut cloud = EigCloud { n: cfg.n, points: Vec::with_capacity(cfg.n * cfg.samples) };
    for (k, eig) in per_sample.into_iter().enumerate() {
        cloud.points.extend(eig?.into_iter().map(|z| (z, k)));
    }
    Ok(cloud)
}

/// Agreement of an eigenvalue cloud with Σ_{s,τ} and the Brown density.
#[derive(Debug, Clone, Serialize)]
pub struct EigReport {
    pub count: usize,
    pub inside_fraction: f64,
    pub bins: usize,
    pub chi2: f64,
    pub dof: usize,
}

/// Classifies eigenvalues against the dilated strip and compares a 2-D histogram with the density.
///
/// The histogram uses `bins × bins` cells over `bounds`; expected counts come
/// from a raster refined `refine` times in each direction. Cells with fewer
/// than five expected counts are merged into a single remainder cell.
pub fn eig_vs_density(cloud: &EigCloud, prof: &DomainProfile, bounds: Bounds, bins: usize, refine: usize) -> Result<EigReport> {
    if cloud.is_empty() {
        return Err(Error::InvalidArgument("eigenvalue cloud is empty".into()));
    }
    if bins == 0 || refine == 0 {
        return Err(Error::InvalidArgument("bins and refine must be positive".into()));
    }
    let total = cloud.len();
    let inside = cloud
        .points
        .iter()
        .filter(|(z, _)| prof.contains_dilated(*z, CONTAINMENT_DILATION) != Location::Outside)
        .count();
    let fine = brown_measure::raster(prof, bounds, bins * refine, bins * refine)?;
    let cell = fine.dx() * fine.dy();
    let mut expected = vec![0.0; bins * bins];
    for j in 0..bins * refine {
        for i in 0..bins * refine {
            expected[(j / refine) * bins + i / refine] += fine.get(i, j) * cell * total as f64;
        }
    }
    let mut observed = vec![0usize; bins * bins];
    let mut outside_box = 0usize;
    let wx = (bounds.x_max - bounds.x_min) / bins as f64;
    let wy = (bounds.y_max - bounds.y_min) / bins as f64;
    for (z, _) in &cloud.points {
        let i = ((z.re - bounds.x_min) / wx).floor();
        let j = ((z.im - bounds.y_min) / wy).floor();
        if i >= 0.0 && j >= 0.0 && (i as usize) < bins && (j as usize) < bins {
            observed[j as usize * bins + i as usize] += 1;
        } else {
            outside_box += 1;
        }
    }
    let mut chi2 = 0.0;
    let mut used = 0usize;
    let mut rest_obs = outside_box as f64;
    let mut rest_exp = (total as f64 - expected.iter().sum::<f64>()).max(0.0);
    for (o, e) in observed.iter().zip(&expected) {
        if *e >= 5.0 {
            chi2 += (*o as f64 - e).powi(2) / e;
            used += 1;
        } else {
            rest_obs += *o as f64;
            rest_exp += e;
        }
    }
    if rest_exp >= 5.0 {
        chi2 += (rest_obs - rest_exp).powi(2) / rest_exp;
        used += 1;
    }
    Ok(EigReport {
        count: total,
        inside_fraction: inside as f64 / total as f64,
        bins: used,
        chi2,
        dof: used.saturating_sub(1),
    })
}

/// `(1/N) log det((X − λ)^*(X − λ) + ε²)` by Cholesky.
pub fn regularized_log_det(x: &Mat<Complex64>, lambda: Complex64, eps: f64) -> Result<f64> {
    let n = x.nrows();
    let shifted = Mat::from_fn(n, n, |i, j| if i == j { x[(i, j)] - lambda } else { x[(i, j)] });
    let mut gram = Mat::<Complex64>::zeros(n, n);
    faer::linalg::matmul::matmul(&mut gram, Accum::Replace, shifted.adjoint(), &shifted, Complex64::new(1.0, 0.0), Par::Seq);
    for i in 0..n {
        gram[(i, i)] += eps * eps;
    }
    let llt = gram.llt(Side::Lower).map_err(|_| Error::CholeskyFailure)?;
    let l = llt.L();
    let mut sum = 0.0;
    for i in 0..n {
        let d = l[(i, i)].re;
        if !(d > 0.0) {
            return Err(Error::CholeskyFailure);
        }
        sum += d.ln();
    }
    Ok(2.0 * sum / n as f64)
}

/// Monte-Carlo estimate of S(s, τ, λ, ε) at several points from shared samples.
///
/// Returns `(mean, stderr)` for each point.
pub fn estimate_s_mc_many(cfg: &SimConfig, m: &CircleMeasure, s: f64, tau: Complex64, points: &[(Complex64, f64)]) -> Result<Vec<(f64, f64)>> {
    cfg.validate()?;
    check_sde_params(s, tau)?;
    if let Some(&(_, eps)) = points.iter().find(|p| !(p.1 > 0.0)) {
        return Err(Error::InvalidArgument(format!("ε = {eps} must be positive")));
    }
    let per_sample: Vec<Result<Vec<f64>>> = with_threads(|| {
        (0..cfg.samples)
            .into_par_iter()
            .map(|k| {
                let mut urng = sample_rng(cfg.seed, k, STREAM_UNITARY);
                let u = initial_unitary(m, cfg.n, &mut urng);
                let eval = |b: &Mat<Complex64>| -> Result<Vec<f64>> {
                    let x = product(&u, b);
                    points.iter().map(|&(l, e)| regularized_log_det(&x, l, e)).collect()
                };
                if cfg.extrapolate {
                    let (fine, coarse) = simulate_b_pair(cfg, s, tau, k)?;
                    let f = eval(&fine)?;
                    let c = eval(&coarse)?;
                    Ok(f.iter().zip(&c).map(|(f, c)| 2.0 * f - c).collect())
                } else {
                    eval(&simulate_b(cfg, s, tau, k)?)
                }
            })
            .collect()
    });
    let rows: Vec<Vec<f64>> = per_sample.into_iter().collect::<Result<_>>()?;
    Ok((0..points.len())
        .map(|p| mean_stderr(&rows.iter().map(|r| r[p]).collect::<Vec<_>>()))
        .collect())
}

/// Monte-Carlo estimate of S(s, τ, λ, ε) with its standard error.
pub fn estimate_s_mc(cfg: &SimConfig, m: &CircleMeasure, s: f64, tau: Complex64, lambda: Complex64, eps: f64) -> Result<(f64, f64)> {
    Ok(estimate_s_mc_many(cfg, m, s, tau, &[(lambda, eps)])?[0])
}

/// `(1/N) tr` of a product of `x` and `x*` following `word`.
pub fn word_trace(x: &Mat<Complex64>, word: &StarWord) -> Complex64 {
    let n = x.nrows();
    let letters = word.letters();
    if letters.is_empty() {
        return Complex64::new(1.0, 0.0);
    }
    let adj = x.adjoint().to_owned();
    let pick = |star: bool| if star { &adj } else { x };
    let last = pick(letters[letters.len() - 1]);
    if letters.len() == 1 {
        return (0..n).map(|i| last[(i, i)]).sum::<Complex64>() / n as f64;
    }
    let mut acc = pick(letters[0]).clone();
    for &l in &letters[1..letters.len() - 1] {
        acc = product(&acc, pick(l));
    }
    let mut t = Complex64::new(0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            t += acc[(i, j)] * last[(j, i)];
        }
    }
    t / n as f64
}

/// Monte-Carlo ∗-moment with separate standard errors of both parts.
#[derive(Debug, Clone, Serialize)]
pub struct MomentEstimate {
    pub word: String,
    pub mean: Complex64,
    pub stderr_re: f64,
    pub stderr_im: f64,
}

/// Aggregates per-sample traces into estimates.
pub fn summarize_traces(words: &[StarWord], rows: &[Vec<Complex64>]) -> Vec<MomentEstimate> {
    words
        .iter()
        .enumerate()
        .map(|(w, word)| {
            let re: Vec<f64> = rows.iter().map(|r| r[w].re).collect();
            let im: Vec<f64> = rows.iter().map(|r| r[w].im).collect();
            let (mr, sr) = mean_stderr(&re);
            let (mi, si) = mean_stderr(&im);
            MomentEstimate { word: word.to_string(), mean: Complex64::new(mr, mi), stderr_re: sr, stderr_im: si }
        })
        .collect()
}

/// Per-sample traces of `f(b)` for a pair of independent factors, extrapolated if configured.
fn traces_per_sample<F>(cfg: &SimConfig, words: &[StarWord], build: F) -> Result<Vec<Complex64>>
where
    F: Fn(bool) -> Result<(Mat<Complex64>, Option<Mat<Complex64>>)>,
{
    let (fine, coarse) = build(cfg.extrapolate)?;
    let f: Vec<Complex64> = words.iter().map(|w| word_trace(&fine, w)).collect();
    match coarse {
        Some(c) => Ok(f.iter().zip(words).map(|(f, w)| 2.0 * f - word_trace(&c, w)).collect()),
        None => Ok(f),
    }
}

/// Monte-Carlo ∗-moments of `b_{s,τ}(1)`.
pub fn mc_moments(cfg: &SimConfig, s: f64, tau: Complex64, words: &[StarWord]) -> Result<Vec<MomentEstimate>> {
    cfg.validate()?;
    check_sde_params(s, tau)?;
    let rows: Vec<Result<Vec<Complex64>>> = with_threads(|| {
        (0..cfg.samples)
            .into_par_iter()
            .map(|k| {
                traces_per_sample(cfg, words, |pair| {
                    let mut rng = sample_rng(cfg.seed, k, STREAM_FIRST);
                    drive(cfg, s, tau, &mut rng, pair)
                })
            })
            .collect()
    });
    let rows: Vec<Vec<Complex64>> = rows.into_iter().collect::<Result<_>>()?;
    Ok(summarize_traces(words, &rows))
}

/// Monte-Carlo ∗-moments of `b_{s,τ}(1) b'_{s',τ'}(1)` with independent factors.
pub fn mc_product_moments(cfg: &SimConfig, first: (f64, Complex64), second: (f64, Complex64), words: &[StarWord]) -> Result<Vec<MomentEstimate>> {
    cfg.validate()?;
    check_sde_params(first.0, first.1)?;
    check_sde_params(second.0, second.1)?;
    let rows: Vec<Result<Vec<Complex64>>> = with_threads(|| {
        (0..cfg.samples)
            .into_par_iter()
            .map(|k| {
                traces_per_sample(cfg, words, |pair| {
                    let mut r1 = sample_rng(cfg.seed, k, STREAM_FIRST);
                    let mut r2 = sample_rng(cfg.seed, k, STREAM_SECOND);
                    let (f1, c1) = drive(cfg, first.0, first.1, &mut r1, pair)?;
                    let (f2, c2) = drive(cfg, second.0, second.1, &mut r2, pair)?;
                    let coarse = match (c1, c2) {
                        (Some(a), Some(b)) => Some(product(&a, &b)),
                        _ => None,
                    };
                    Ok((product(&f1, &f2), coarse))
                })
            })
            .collect()
    });
    let rows: Vec<Vec<Complex64>> = rows.into_iter().collect::<Result<_>>()?;
    Ok(summarize_traces(words, &rows))
}

/// Monte-Carlo ∗-moments of `a₁ b_{s,τ}(1) a₂` for fixed matrices `a₁`, `a₂`.
pub fn mc_sandwich_moments(cfg: &SimConfig, s: f64, tau: Complex64, a1: &Mat<Complex64>, a2: &Mat<Complex64>, words: &[StarWord]) -> Result<Vec<Vec<Complex64>>> {
    cfg.validate()?;
    check_sde_params(s, tau)?;
    if a1.nrows() != cfg.n || a2.nrows() != cfg.n {
        return Err(Error::InvalidArgument("a₁ and a₂ must have the simulated size".into()));
    }
    let rows: Vec<Result<Vec<Complex64>>> = with_threads(|| {
        (0..cfg.samples)
            .into_par_iter()
            .map(|k| {
                traces_per_sample(cfg, words, |pair| {
                    let mut rng = sample_rng(cfg.seed, k, STREAM_FIRST);
                    let (f, c) = drive(cfg, s, tau, &mut rng, pair)?;
                    let wrap = |b: &Mat<Complex64>| product(&product(a1, b), a2);
                    Ok((wrap(&f), c.as_ref().map(wrap)))
                })
            })
            .collect()
    });
    rows.into_iter().collect()
}
