//! Adaptive Simpson quadrature for vector-valued integrands.

/// Integrates `f` over `[a, b]` with adaptive Simpson refinement.
///
/// All `K` components are integrated together so that expensive shared work
/// inside `f` is done once per node. A panel is accepted when the max-norm of
/// the difference between the coarse and refined Simpson estimates is below
/// `15 · tol_panel`, where the tolerance is split in half at each bisection.
/// The accepted value includes the Richardson correction. Panels reaching
/// `max_depth` are accepted as they are.
pub fn adaptive_simpson<const K: usize, F>(f: F, a: f64, b: f64, tol: f64, max_depth: u32) -> [f64; K]
where
    F: FnMut(f64) -> [f64; K],
{
    adaptive_simpson_with_floor(f, a, b, tol, 0.0, max_depth)
}

/// [`adaptive_simpson`] with a rounding-noise floor.
///
/// A panel is also accepted when the largest Simpson difference is at most
/// `noise` times the largest Simpson estimate of ∫|f_k| over the panel. This
/// stops refinement once differences are dominated by evaluation noise of
/// relative size `noise`, so the components should be of comparable scale.
pub fn adaptive_simpson_with_floor<const K: usize, F>(mut f: F, a: f64, b: f64, tol: f64, noise: f64, max_depth: u32) -> [f64; K]
where
    F: FnMut(f64) -> [f64; K],
{
    let mut total = [0.0; K];
    if !(b > a) {
        return total;
    }
    let fa = f(a);
    let fm = f(0.5 * (a + b));
    let fb = f(b);
    let whole = simpson(a, b, &fa, &fm, &fb);
    let mut stack = vec![Panel { a, b, fa, fm, fb, whole, tol, depth: 0 }];
    while let Some(p) = stack.pop() {
        let m = 0.5 * (p.a + p.b);
        let lm = f(0.5 * (p.a + m));
        let rm = f(0.5 * (m + p.b));
        let left = simpson(p.a, m, &p.fa, &lm, &p.fm);
        let right = simpson(m, p.b, &p.fm, &rm, &p.fb);
        let mut err = 0.0f64;
        let mut mass = 0.0f64;
        let h = (p.b - p.a) / 12.0;
        for k in 0..K {
            err = err.max((left[k] + right[k] - p.whole[k]).abs());
            mass = mass.max(h * (p.fa[k].abs() + 4.0 * lm[k].abs() + 2.0 * p.fm[k].abs() + 4.0 * rm[k].abs() + p.fb[k].abs()));
        }
        if err <= 15.0 * p.tol || err <= noise * mass || p.depth >= max_depth || m <= p.a || m >= p.b {
            for k in 0..K {
                let refined = left[k] + right[k];
                total[k] += refined + (refined - p.whole[k]) / 15.0;
            }
        } else {
            let half = 0.5 * p.tol;
            stack.push(Panel { a: p.a, b: m, fa: p.fa, fm: lm, fb: p.fm, whole: left, tol: half, depth: p.depth + 1 });
            stack.push(Panel { a: m, b: p.b, fa: p.fm, fm: rm, fb: p.fb, whole: right, tol: half, depth: p.depth + 1 });
        }
    }
    total
}

/// Adaptive Simpson with a per-panel relative criterion, meant for
/// nonnegative integrands whose magnitude is not known in advance.
///
/// A panel of width h is accepted when every component satisfies
/// `|refined − coarse| ≤ 15 · rel · max(|refined|, floor · h)`. The floor keeps
/// components that are pure rounding noise from being refined without end.
pub fn adaptive_simpson_relative<const K: usize, F>(mut f: F, a: f64, b: f64, rel: f64, floor: f64, max_depth: u32) -> [f64; K]
where
    F: FnMut(f64) -> [f64; K],
{
    let mut total = [0.0; K];
    if !(b > a) {
        return total;
    }
    let fa = f(a);
    let fm = f(0.5 * (a + b));
    let fb = f(b);
    let whole = simpson(a, b, &fa, &fm, &fb);
    let mut stack = vec![Panel { a, b, fa, fm, fb, whole, tol: rel, depth: 0 }];
    while let Some(p) = stack.pop() {
        let m = 0.5 * (p.a + p.b);
        let lm = f(0.5 * (p.a + m));
        let rm = f(0.5 * (m + p.b));
        let left = simpson(p.a, m, &p.fa, &lm, &p.fm);
        let right = simpson(m, p.b, &p.fm, &rm, &p.fb);
        let ok = (0..K).all(|k| {
            let refined = left[k] + right[k];
            (refined - p.whole[k]).abs() <= 15.0 * rel * refined.abs().max(floor * (p.b - p.a))
        });
        if ok || p.depth >= max_depth || m <= p.a || m >= p.b {
            for k in 0..K {
                total[k] += left[k] + right[k];
            }
        } else {
            stack.push(Panel { a: p.a, b: m, fa: p.fa, fm: lm, fb: p.fm, whole: left, tol: rel, depth: p.depth + 1 });
            stack.push(Panel { a: m, b: p.b, fa: p.fm, fm: rm, fb: p.fb, whole: right, tol: rel, depth: p.depth + 1 });
        }
    }
    total
}

struct Panel<const K: usize> {
    a: f64,
    b: f64,
    fa: [f64; K],
    fm: [f64; K],
    fb: [f64; K],
    whole: [f64; K],
    tol: f64,
    depth: u32,
}

fn simpson<const K: usize>(a: f64, b: f64, fa: &[f64; K], fm: &[f64; K], fb: &[f64; K]) -> [f64; K] {
    let h = (b - a) / 6.0;
    let mut out = [0.0; K];
    for k in 0..K {
        out[k] = h * (fa[k] + 4.0 * fm[k] + fb[k]);
    }
    out
}

/// Maps `t ∈ [0, 1]` onto `[a, b]` with a cubic whose derivative vanishes at both ends.
///
/// Returns the point and the Jacobian. Square-root endpoint behavior of the
/// integrand becomes smooth in `t`.
pub fn smoothstep(a: f64, b: f64, t: f64) -> (f64, f64) {
    let w = b - a;
    (a + w * t * t * (3.0 - 2.0 * t), w * 6.0 * t * (1.0 - t))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let r = adaptive_simpson(|x| [x * x * x, 1.0], 0.0, 2.0, 1e-12, 20);
        assert!((r[0] - 4.0).abs() < 1e-13);
        assert!((r[1] - 2.0).abs() < 1e-13);
    }

    #[test]
    fn sqrt_endpoint_with_smoothstep() {
        let r = adaptive_simpson(
            |t| {
                let (x, j) = smoothstep(0.0, 1.0, t);
                [x.sqrt() * j]
            },
            0.0,
            1.0,
            1e-12,
            30,
        );
        assert!((r[0] - 2.0 / 3.0).abs() < 1e-11);
    }

    #[test]
    fn floor_stops_on_noisy_integrand() {
        let mut calls = 0u64;
        let r = adaptive_simpson_with_floor(
            |x: f64| {
                calls += 1;
                let jitter = 1.0 + 1e-9 * (x * 1e7).sin();
                [jitter / (x * x + 1e-6)]
            },
            -1.0,
            1.0,
            1e-14,
            1e-7,
            60,
        );
        let exact = 2.0 * (1e3f64).atan() * 1e3;
        assert!((r[0] / exact - 1.0).abs() < 1e-6);
        assert!(calls < 1_000_000);
    }

    #[test]
    fn relative_handles_unknown_scale() {
        let e = 1e-6;
        let r = adaptive_simpson_relative(|x| [e / (x * x + e * e) / (x * x + e * e)], -1.0, 1.0, 1e-3, 0.0, 60);
        let exact = (1.0 / e).atan() / (e * e) + 1.0 / (e * (1.0 + e * e));
        assert!((r[0] / exact - 1.0).abs() < 1e-2);
    }

    #[test]
    fn relative_floor_stops_on_noise() {
        let mut calls = 0usize;
        let r = adaptive_simpson_relative(
            |x: f64| {
                calls += 1;
                [1.0, 1e-30 * (1e6 * x).sin().abs()]
            },
            0.0,
            1.0,
            1e-3,
            1.0,
            50,
        );
        assert!((r[0] - 1.0).abs() < 1e-12);
        assert!(calls < 10_000, "{calls} evaluations");
    }

    #[test]
    fn peaked_integrand() {
        let e = 1e-3;
        let r = adaptive_simpson(|x| [e / (x * x + e * e)], -1.0, 1.0, 1e-11, 50);
        let exact = 2.0 * (1.0 / e).atan();
        assert!((r[0] - exact).abs() < 1e-9);
    }
}
