//! Shared numerical kernels: adaptive quadrature, monotone bisection,
//! binomial confidence intervals, running statistics.

/// Adaptive Simpson quadrature of `f` on `[a, b]` to absolute tolerance
/// `tol`. `f` must be finite on the open interval; endpoint values are
/// evaluated once.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
        h / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn adapt<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(fa, flm, fm, m - a);
        let right = simpson(fm, frm, fb, b - m);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            adapt(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
                + adapt(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = simpson(fa, fm, fb, b - a);
    adapt(&f, a, b, fa, fm, fb, whole, tol, 48)
}

/// Bisection on a monotone function: returns `x` in `[lo, hi]` with
/// `f(x) ~= target`, to absolute tolerance `tol` on `x`. The direction of
/// monotonicity is inferred from the endpoint values; the endpoints must
/// bracket `target`.
pub fn bisect_monotone<F: Fn(f64) -> f64>(f: F, target: f64, lo: f64, hi: f64, tol: f64) -> f64 {
    let increasing = f(hi) >= f(lo);
    let (mut lo, mut hi) = (lo, hi);
    for _ in 0..200 {
        if hi - lo <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if (f(mid) < target) == increasing {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// 95% Wilson score interval for a binomial proportion.
pub fn wilson95(successes: usize, trials: usize) -> (f64, f64) {
    assert!(trials > 0, "wilson95 needs at least one trial");
    let z = 1.959_963_984_540_054_f64;
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = p + z2 / (2.0 * n);
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    // at the boundaries centre == half up to rounding; the interval ends
    // are exact there
    let lo = if successes == 0 { 0.0 } else { ((centre - half) / denom).max(0.0) };
    let hi = if successes == trials { 1.0 } else { ((centre + half) / denom).min(1.0) };
    (lo, hi)
}

/// Sample mean and standard error of the mean. Empty input yields (0, 0);
/// a single observation yields stderr 0.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Exact factorial as f64; `k <= 170` fits in the double range.
pub fn factorial(k: u32) -> f64 {
    assert!(k <= 170, "factorial overflows f64 beyond 170");
    (1..=k as u64).map(|i| i as f64).product()
}
