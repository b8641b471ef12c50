//! ∗-moments of the free multiplicative Brownian motion `b_{s,τ}`.
//!
//! The normalized traces `tr[b^{ε₁}⋯b^{εₙ}]` of all words up to a fixed length
//! satisfy a closed system of ODEs in the time parameter. Pair terms only
//! involve strictly shorter words together with the word itself, so the whole
//! hierarchy is integrated at once by classical RK4. Traces are cyclic, hence
//! words are stored by their smallest rotation.

use std::collections::HashMap;
use std::fmt;

use faer::Mat;
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rmt_lab::{self, MomentEstimate, SimConfig};

/// Largest supported word length.
pub const MAX_WORD_LENGTH: usize = 10;

/// Tolerance of the step-halving error estimate.
pub const HIERARCHY_TOL: f64 = 1e-8;

/// Deviations below this are treated as exact when the standard error vanishes.
const STDERR_FLOOR: f64 = 1e-9;

/// A word in `b` and `b*`; `true` marks a starred letter.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct StarWord {
    letters: Vec<bool>,
}

impl StarWord {
    pub fn new(letters: Vec<bool>) -> Self {
        Self { letters }
    }

    pub fn empty() -> Self {
        Self { letters: Vec::new() }
    }

    /// Parses `+` / `*` strings, also accepting comma separated `plain` / `star`.
    pub fn parse(text: &str) -> Result<Self> {
        let t = text.trim();
        if t.contains(',') || t.starts_with("plain") || t.starts_with("star") {
            let letters = t
                .split(',')
                .map(|p| match p.trim() {
                    "plain" => Ok(false),
                    "star" => Ok(true),
                    other => Err(Error::InvalidArgument(format!("unknown letter {other:?}"))),
                })
                .collect::<Result<Vec<_>>>()?;
            return Ok(Self { letters });
        }
        let letters = t
            .chars()
            .map(|c| match c {
                '+' | '1' => Ok(false),
                '*' => Ok(true),
                other => Err(Error::InvalidArgument(format!("unknown letter {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { letters })
    }

    pub fn letters(&self) -> &[bool] {
        &self.letters
    }

    pub fn len(&self) -> usize {
        self.letters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.letters.is_empty()
    }

    /// Lexicographically smallest cyclic rotation.
    pub fn canonical(&self) -> Self {
        let n = self.letters.len();
        if n == 0 {
            return self.clone();
        }
        (0..n)
            .map(|k| {
                let mut l = self.letters[k..].to_vec();
                l.extend_from_slice(&self.letters[..k]);
                l
            })
            .min()
            .map(Self::new)
            .expect("nonempty word has rotations")
    }

    /// Word of the adjoint: reversed with every letter starred or unstarred.
    pub fn adjoint(&self) -> Self {
        Self { letters: self.letters.iter().rev().map(|l| !l).collect() }
    }

    fn concat(parts: &[&[bool]]) -> Self {
        Self { letters: parts.iter().flat_map(|p| p.iter().copied()).collect() }
    }
}

impl fmt::Display for StarWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &l in &self.letters {
            f.write_str(if l { "*" } else { "+" })?;
        }
        Ok(())
    }
}

/// All canonical words of length `1..=max_len`, ordered by length then letters.
pub fn all_words(max_len: usize) -> Vec<StarWord> {
    let mut out = Vec::new();
    for len in 1..=max_len {
        let mut seen = std::collections::BTreeSet::new();
        for bits in 0u32..(1u32 << len) {
            let w = StarWord::new((0..len).map(|k| bits >> (len - 1 - k) & 1 == 1).collect());
            seen.insert(w.canonical());
        }
        out.extend(seen);
    }
    out
}

/// One term `coef · tr[outer] · tr[inner]` of the moment ODE.
#[derive(Debug, Clone, PartialEq)]
pub struct RhsTerm {
    pub coef: Complex64,
    pub outer: StarWord,
    pub inner: StarWord,
}

/// Symbolic right-hand side of the moment ODE for `b_{s+s', τ}`.
pub fn rhs_terms(word: &StarWord, s: f64, s_prime: f64, tau: Complex64) -> Vec<RhsTerm> {
    let w = word.letters();
    let n = w.len();
    let mut terms = Vec::new();
    if n == 0 {
        return terms;
    }
    let total = s + s_prime;
    let tau_of = |star: bool| if star { tau.conj() } else { tau };
    let drift: Complex64 = w.iter().map(|&l| total - tau_of(l)).sum();
    terms.push(RhsTerm { coef: -0.5 * drift, outer: word.clone(), inner: StarWord::empty() });
    for j in 0..n {
        for k in j + 1..n {
            let (coef, outer, inner) = match (w[j], w[k]) {
                (false, false) | (true, true) => (
                    -(total - tau_of(w[j])),
                    StarWord::concat(&[&w[..=j], &w[k + 1..]]),
                    StarWord::new(w[j + 1..=k].to_vec()),
                ),
                (false, true) => (
                    Complex64::new(total, 0.0),
                    StarWord::concat(&[&w[..=j], &w[k..]]),
                    StarWord::new(w[j + 1..k].to_vec()),
                ),
                (true, false) => (
                    Complex64::new(total, 0.0),
                    StarWord::concat(&[&w[..j], &w[k + 1..]]),
                    StarWord::new(w[j..=k].to_vec()),
                ),
            };
            terms.push(RhsTerm { coef, outer, inner });
        }
    }
    terms
}

/// Evaluates the moment ODE right-hand side against a snapshot of traces.
///
/// The snapshot is queried with canonical words; the empty word is always 1.
pub fn moment_rhs<F>(word: &StarWord, snapshot: F, s: f64, s_prime: f64, tau: Complex64) -> Result<Complex64>
where
    F: Fn(&StarWord) -> Option<Complex64>,
{
    let look = |w: &StarWord| -> Result<Complex64> {
        if w.is_empty() {
            return Ok(Complex64::new(1.0, 0.0));
        }
        snapshot(&w.canonical()).ok_or_else(|| Error::MissingLowerWord(w.to_string()))
    };
    let mut sum = Complex64::new(0.0, 0.0);
    for t in rhs_terms(word, s, s_prime, tau) {
        sum += t.coef * look(&t.outer)? * look(&t.inner)?;
    }
    Ok(sum)
}

/// One right-hand-side term: coefficient and the state indices of its two
/// factors, `None` meaning the empty word.
type CompiledTerm = (Complex64, Option<usize>, Option<usize>);

/// Compiled hierarchy, one list of terms per word.
struct Hierarchy {
    terms: Vec<Vec<CompiledTerm>>,
}

impl Hierarchy {
    fn compile(words: &[StarWord], index: &HashMap<StarWord, usize>, s: f64, tau: Complex64) -> Self {
        let slot = |w: &StarWord| if w.is_empty() { None } else { Some(index[&w.canonical()]) };
        let terms = words
            .iter()
            .map(|w| rhs_terms(w, s, 0.0, tau).iter().map(|t| (t.coef, slot(&t.outer), slot(&t.inner))).collect())
            .collect();
        Self { terms }
    }

    fn eval(&self, y: &[Complex64], out: &mut [Complex64]) {
        let get = |i: Option<usize>| i.map_or(Complex64::new(1.0, 0.0), |i| y[i]);
        for (o, terms) in out.iter_mut().zip(&self.terms) {
            *o = terms.iter().map(|&(c, a, b)| c * get(a) * get(b)).sum();
        }
    }

    fn rk4(&self, r_max: f64, steps: usize, dim: usize) -> Vec<Vec<Complex64>> {
        let h = r_max / steps as f64;
        let mut y = vec![Complex64::new(1.0, 0.0); dim];
        let mut traj = Vec::with_capacity(steps + 1);
        traj.push(y.clone());
        let mut k1 = vec![Complex64::new(0.0, 0.0); dim];
        let mut k2 = k1.clone();
        let mut k3 = k1.clone();
        let mut k4 = k1.clone();
        let mut tmp = k1.clone();
        for _ in 0..steps {
            self.eval(&y, &mut k1);
            for i in 0..dim {
                tmp[i] = y[i] + 0.5 * h * k1[i];
            }
            self.eval(&tmp, &mut k2);
            for i in 0..dim {
                tmp[i] = y[i] + 0.5 * h * k2[i];
            }
            self.eval(&tmp, &mut k3);
            for i in 0..dim {
                tmp[i] = y[i] + h * k3[i];
            }
            self.eval(&tmp, &mut k4);
            for i in 0..dim {
                y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            traj.push(y.clone());
        }
        traj
    }
}

/// Traces of all words up to a given length on a uniform grid in r.
#[derive(Debug, Clone, Serialize)]
pub struct MomentTable {
    pub s: f64,
    pub tau: Complex64,
    pub r_max: f64,
    pub steps: usize,
    pub error_estimate: f64,
    words: Vec<StarWord>,
    #[serde(skip)]
    index: HashMap<StarWord, usize>,
    values: Vec<Vec<Complex64>>,
}

impl MomentTable {
    pub fn words(&self) -> &[StarWord] {
        &self.words
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|i| self.r_max * i as f64 / self.steps as f64).collect()
    }

    /// Trace of `word` at grid index `step`.
    pub fn get(&self, word: &StarWord, step: usize) -> Result<Complex64> {
        if word.is_empty() {
            return Ok(Complex64::new(1.0, 0.0));
        }
        let i = *self.index.get(&word.canonical()).ok_or_else(|| Error::MissingLowerWord(word.to_string()))?;
        self.values
            .get(step)
            .map(|row| row[i])
            .ok_or_else(|| Error::InvalidArgument(format!("grid index {step} exceeds {}", self.steps)))
    }

    /// Trace of `word` at `r_max`.
    pub fn at_end(&self, word: &StarWord) -> Result<Complex64> {
        self.get(word, self.steps)
    }

    /// `(r, tr[word](r))` along the grid.
    pub fn trajectory(&self, word: &StarWord) -> Result<Vec<(f64, Complex64)>> {
        self.times().into_iter().enumerate().map(|(k, r)| Ok((r, self.get(word, k)?))).collect()
    }

    /// Snapshot lookup at a grid index, suitable for [`moment_rhs`].
    pub fn snapshot(&self, step: usize) -> impl Fn(&StarWord) -> Option<Complex64> + '_ {
        move |w| self.index.get(w).and_then(|&i| self.values.get(step).map(|row| row[i]))
    }
}

/// Integrates the hierarchy for `b_{s,τ}(r)`, `0 ≤ r ≤ r_max`, from `tr ≡ 1`.
///
/// The result uses `2·steps` RK4 steps and is sampled at `steps + 1` points.
/// The run with `steps` steps gives the error estimate `max|y_h − y_{h/2}|/15`.
pub fn solve_hierarchy(s: f64, tau: Complex64, r_max: f64, max_len: usize, steps: usize) -> Result<MomentTable> {
    if !(s >= 0.0) || !s.is_finite() || !tau.re.is_finite() || !tau.im.is_finite() {
        return Err(Error::InvalidParams(format!("s = {s}, τ = {tau}")));
    }
    if !(r_max >= 0.0) || !r_max.is_finite() {
        return Err(Error::InvalidArgument(format!("horizon r = {r_max}")));
    }
    if max_len > MAX_WORD_LENGTH {
        return Err(Error::InvalidArgument(format!("word length {max_len} exceeds {MAX_WORD_LENGTH}")));
    }
    if steps == 0 {
        return Err(Error::InvalidArgument("at least one step is required".into()));
    }
    let words = all_words(max_len);
    let index: HashMap<StarWord, usize> = words.iter().cloned().enumerate().map(|(i, w)| (w, i)).collect();
    let h = Hierarchy::compile(&words, &index, s, tau);
    let coarse = h.rk4(r_max, steps, words.len());
    let fine = h.rk4(r_max, 2 * steps, words.len());
    let mut diff: f64 = 0.0;
    let mut values = Vec::with_capacity(steps + 1);
    for (k, row) in coarse.iter().enumerate() {
        let f = &fine[2 * k];
        for (a, b) in row.iter().zip(f) {
            diff = diff.max((a - b).norm());
        }
        values.push(f.clone());
    }
    let estimate = diff / 15.0;
    if !(estimate < HIERARCHY_TOL) {
        return Err(Error::StepTooLarge { estimate, tolerance: HIERARCHY_TOL });
    }
    Ok(MomentTable { s, tau, r_max, steps, error_estimate: estimate, words, index, values })
}

/// Comparison of one word between prediction and Monte-Carlo.
#[derive(Debug, Clone, Serialize)]
pub struct WordComparison {
    pub word: String,
    pub predicted: Complex64,
    pub estimate: MomentEstimate,
    pub sigma: f64,
}

/// Deviations of Monte-Carlo moments from a prediction, in standard errors.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub words: Vec<WordComparison>,
    pub max_sigma: f64,
}

fn sigma_of(diff: f64, stderr: f64) -> f64 {
    diff.abs() / stderr.max(STDERR_FLOOR)
}

/// Compares Monte-Carlo estimates with predicted traces, part by part.
pub fn compare(predicted: &[Complex64], estimates: Vec<MomentEstimate>) -> ComparisonReport {
    let words: Vec<WordComparison> = predicted
        .iter()
        .zip(estimates)
        .map(|(&p, e)| {
            let sigma = sigma_of(e.mean.re - p.re, e.stderr_re).max(sigma_of(e.mean.im - p.im, e.stderr_im));
            WordComparison { word: e.word.clone(), predicted: p, estimate: e, sigma }
        })
        .collect();
    let max_sigma = words.iter().map(|w| w.sigma).fold(0.0, f64::max);
    ComparisonReport { words, max_sigma }
}

/// Hierarchy at `(s, τ)` against simulated `b_{s,τ}(1)`.
pub fn hierarchy_vs_mc(s: f64, tau: Complex64, max_len: usize, steps: usize, cfg: &SimConfig) -> Result<ComparisonReport> {
    let table = solve_hierarchy(s, tau, 1.0, max_len, steps)?;
    let words = table.words().to_vec();
    let predicted = words.iter().map(|w| table.at_end(w)).collect::<Result<Vec<_>>>()?;
    Ok(compare(&predicted, rmt_lab::mc_moments(cfg, s, tau, &words)?))
}

/// Hierarchy at `(s + s', τ + τ')` against the product of two independent simulated factors.
pub fn factorization_check(s: f64, tau: Complex64, s_prime: f64, tau_prime: Complex64, max_len: usize, steps: usize, cfg: &SimConfig) -> Result<ComparisonReport> {
    let table = solve_hierarchy(s + s_prime, tau + tau_prime, 1.0, max_len, steps)?;
    let words = table.words().to_vec();
    let predicted = words.iter().map(|w| table.at_end(w)).collect::<Result<Vec<_>>>()?;
    let mc = if s_prime == 0.0 && tau_prime == Complex64::new(0.0, 0.0) {
        rmt_lab::mc_moments(cfg, s, tau, &words)?
    } else {
        rmt_lab::mc_product_moments(cfg, (s, tau), (s_prime, tau_prime), &words)?
    };
    Ok(compare(&predicted, mc))
}

/// Right-hand side of the t-derivative formula for `tr[B^{ε}]`, `B = a₁ b_{s,tτ} a₂`.
///
/// `trace` returns the trace of any word at the current `t`.
pub fn t_derivative_rhs<F>(word: &StarWord, tau: Complex64, trace: F) -> Complex64
where
    F: Fn(&StarWord) -> Complex64,
{
    let w = word.letters();
    let tau_of = |star: bool| if star { tau.conj() } else { tau };
    let f = trace(word);
    let mut out = 0.5 * f * w.iter().map(|&l| tau_of(l)).sum::<Complex64>();
    for j in 0..w.len() {
        for k in j + 1..w.len() {
            if w[j] == w[k] {
                let outer = StarWord::concat(&[&w[..=j], &w[k + 1..]]);
                let inner = StarWord::new(w[j + 1..=k].to_vec());
                out -= tau_of(w[j]) * trace(&outer) * trace(&inner);
            }
        }
    }
    out
}

/// Finite-difference t-derivative against the formula, per word.
#[derive(Debug, Clone, Serialize)]
pub struct TDerivativeWord {
    pub word: String,
    pub derivative: Complex64,
    pub formula: Complex64,
    pub stderr: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TDerivativeReport {
    pub t: f64,
    pub dt: f64,
    pub words: Vec<TDerivativeWord>,
    pub max_sigma: f64,
}

/// Checks the t-derivative formula with Monte-Carlo traces of `a₁ b_{s,tτ} a₂`.
///
/// Simulations at `t ± dt` and `t` share the seed, so the central difference
/// has small variance. The standard error of each side combines the
/// per-sample spread of the difference and of the formula.
#[allow(clippy::too_many_arguments)]
pub fn t_derivative_check(s: f64, tau: Complex64, words: &[StarWord], a1: &Mat<Complex64>, a2: &Mat<Complex64>, t: f64, dt: f64, cfg: &SimConfig) -> Result<TDerivativeReport> {
    if !(t > 0.0 && t < 1.0) || !(dt > 0.0) || t - dt <= 0.0 || t + dt >= 1.0 {
        return Err(Error::InvalidArgument(format!("t = {t}, dt = {dt} must satisfy 0 < t − dt < t + dt < 1")));
    }
    let mut needed: Vec<StarWord> = Vec::new();
    let mut push = |w: StarWord| {
        if !w.is_empty() && !needed.contains(&w) {
            needed.push(w);
        }
    };
    for w in words {
        push(w.clone());
        let l = w.letters();
        for j in 0..l.len() {
            for k in j + 1..l.len() {
                if l[j] == l[k] {
                    push(StarWord::concat(&[&l[..=j], &l[k + 1..]]));
                    push(StarWord::new(l[j + 1..=k].to_vec()));
                }
            }
        }
    }
    let at = |tt: f64| rmt_lab::mc_sandwich_moments(cfg, s, tau * tt, a1, a2, &needed);
    let plus = at(t + dt)?;
    let minus = at(t - dt)?;
    let mid = at(t)?;
    let pos = |w: &StarWord| needed.iter().position(|x| x == w).expect("word collected above");
    let samples = mid.len();
    let mut report = Vec::new();
    for w in words {
        let i = pos(w);
        let per: Vec<(Complex64, Complex64)> = (0..samples)
            .map(|k| {
                let d = (plus[k][i] - minus[k][i]) / (2.0 * dt);
                let f = t_derivative_rhs(w, tau, |x| if x.is_empty() { Complex64::new(1.0, 0.0) } else { mid[k][pos(x)] });
                (d, f)
            })
            .collect();
        let diff_re: Vec<f64> = per.iter().map(|(d, f)| d.re - f.re).collect();
        let diff_im: Vec<f64> = per.iter().map(|(d, f)| d.im - f.im).collect();
        let (mr, sr) = rmt_lab::mean_stderr(&diff_re);
        let (mi, si) = rmt_lab::mean_stderr(&diff_im);
        let mean = |sel: fn(&(Complex64, Complex64)) -> Complex64| per.iter().map(sel).sum::<Complex64>() / samples as f64;
        report.push(TDerivativeWord {
            word: w.to_string(),
            derivative: mean(|p| p.0),
            formula: mean(|p| p.1),
            stderr: sr.hypot(si),
            sigma: sigma_of(mr, sr).max(sigma_of(mi, si)),
        });
    }
    let max_sigma = report.iter().map(|w| w.sigma).fold(0.0, f64::max);
    Ok(TDerivativeReport { t, dt, words: report, max_sigma })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(s: &str) -> StarWord {
        StarWord::parse(s).unwrap()
    }

    #[test]
    fn canonical_rotation() {
        assert_eq!(w("*+").canonical(), w("+*"));
        assert_eq!(w("+*+").canonical(), w("++*"));
        assert_eq!(all_words(2).len(), 2 + 3);
        assert_eq!(all_words(4).len(), 2 + 3 + 4 + 6);
    }

    #[test]
    fn parse_both_forms() {
        assert_eq!(w("plain,star"), w("+*"));
        assert_eq!(w("+*").to_string(), "+*");
        assert!(StarWord::parse("x").is_err());
    }

    #[test]
    fn rhs_examples() {
        let tau = Complex64::new(0.7, 0.4);
        let s = 1.2;
        let m1 = Complex64::new(0.3, -0.1);
        let r = moment_rhs(&w("+"), |_| Some(m1), s, 0.0, tau).unwrap();
        assert!((r - (-0.5) * (s - tau) * m1).norm() < 1e-15);
        let m2 = Complex64::new(2.0, 0.0);
        let r = moment_rhs(&w("+*"), |_| Some(m2), s, 0.0, tau).unwrap();
        assert!((r - tau.re * m2).norm() < 1e-14);
        assert_eq!(moment_rhs(&StarWord::empty(), |_| None, s, 0.0, tau).unwrap(), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn missing_word_is_reported() {
        let e = moment_rhs(&w("++"), |x| if x.len() == 2 { Some(Complex64::new(1.0, 0.0)) } else { None }, 1.0, 0.0, Complex64::new(1.0, 0.0));
        assert!(matches!(e, Err(Error::MissingLowerWord(_))));
    }

    #[test]
    fn closed_forms() {
        let tau = Complex64::new(1.0, 0.5);
        let t = solve_hierarchy(1.0, tau, 1.0, 4, 200).unwrap();
        let b = (-(Complex64::new(1.0, 0.0) - tau) / 2.0).exp();
        assert!((t.at_end(&w("+")).unwrap() - b).norm() < 1e-8);
        assert!((t.at_end(&w("+*")).unwrap() - Complex64::new(1.0f64.exp(), 0.0)).norm() < 1e-8);
    }

    #[test]
    fn unitary_second_moment() {
        let t = solve_hierarchy(1.0, Complex64::new(0.0, 0.0), 1.0, 2, 200).unwrap();
        let exact = (-1.0f64).exp() * (1.0 - 1.0);
        assert!((t.at_end(&w("++")).unwrap() - exact).norm() < 1e-8);
    }
}
