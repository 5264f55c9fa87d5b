//! Shared fixtures for the integration suites: an independent quadrature
//! oracle for the wealth integral, small statistics helpers, and the frozen
//! benchmark confusion matrices used across the acceptance checks.
//!
//! Each integration test target compiles this module separately, so not
//! every item is used by every target.
#![allow(dead_code)]

// ---------------------------------------------------------------------------
// Independent wealth oracle: adaptive Simpson quadrature
// ---------------------------------------------------------------------------

/// Recursive adaptive Simpson refinement with Richardson extrapolation.
fn simpson_recurse(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    m: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        simpson_recurse(f, a, lm, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + simpson_recurse(f, m, rm, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
}

/// Adaptive Simpson integral of `f` over `[lo, hi]` with a relative
/// tolerance anchored to a coarse midpoint estimate of the magnitude.
pub fn integrate(f: impl Fn(f64) -> f64, lo: f64, hi: f64, rel_tol: f64) -> f64 {
    let n = 64;
    let mut coarse = 0.0;
    for i in 0..n {
        let u = lo + (i as f64 + 0.5) / n as f64 * (hi - lo);
        coarse += f(u);
    }
    coarse *= (hi - lo) / n as f64;
    let scale = coarse.abs().max(f64::MIN_POSITIVE);
    let m = 0.5 * (lo + hi);
    let (fa, fm, fb) = (f(lo), f(m), f(hi));
    let whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_recurse(&f, lo, m, hi, fa, fm, fb, whole, scale * rel_tol, 48)
}

/// Wealth for bet counts `(a, b)` computed by numerical quadrature of
/// `∫₀¹ (1 − u)^a (1 + u)^b du`, fully independent of the library's
/// closed-form series. Accurate to ~1e-12 relative for `a + b ≤ 200`.
pub fn wealth_quadrature(a: u64, b: u64) -> f64 {
    let (ai, bi) = (a as i32, b as i32);
    integrate(
        |u| (1.0 - u).powi(ai) * (1.0 + u).powi(bi),
        0.0,
        1.0,
        1e-12,
    )
}

// ---------------------------------------------------------------------------
// Small statistics helpers
// ---------------------------------------------------------------------------

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Standard error of the mean (sample standard deviation over sqrt(n)).
pub fn standard_error(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (var / n).sqrt()
}

/// Pearson correlation coefficient between two equal-length samples.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let mx = mean(x);
    let my = mean(y);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

// ---------------------------------------------------------------------------
// Frozen benchmark confusion matrices
// ---------------------------------------------------------------------------
// Published confusion matrices from classifier benchmarks, frozen here as
// the reference workloads for the statistical acceptance checks.

/// 3-class matrix with a moderate class-2 edge over the null label
/// (gap 0.55503 − 0.20000 = 0.35503).
pub fn weak3() -> Vec<Vec<f64>> {
    vec![
        vec![0.483609, 0.243609, 0.272782],
        vec![0.186343, 0.559332, 0.254325],
        vec![0.200000, 0.244970, 0.555030],
    ]
}

/// 3-class matrix from a strongly separated source (class-2 gap 0.672).
pub fn strong3() -> Vec<Vec<f64>> {
    vec![
        vec![0.867, 0.065, 0.068],
        vec![0.062, 0.903, 0.035],
        vec![0.14, 0.048, 0.812],
    ]
}

/// Binary classifier evaluated on the distribution it was trained on.
pub fn train2() -> Vec<Vec<f64>> {
    vec![
        vec![0.948529, 0.051471],
        vec![0.012195, 0.987805],
    ]
}

/// The same binary classifier evaluated after covariate shift.
pub fn shift2() -> Vec<Vec<f64>> {
    vec![
        vec![0.701987, 0.298013],
        vec![0.087248, 0.912752],
    ]
}

/// Binary matrix used for the change-detection workload.
pub fn detect2() -> Vec<Vec<f64>> {
    vec![
        vec![0.933413, 0.066587],
        vec![0.063393, 0.936607],
    ]
}

/// Stronger of the two mixture channels (higher class-2 edge).
pub fn mix_strong3() -> Vec<Vec<f64>> {
    vec![
        vec![0.635678, 0.132508, 0.231814],
        vec![0.167847, 0.594985, 0.237168],
        vec![0.149833, 0.123749, 0.726418],
    ]
}

/// Weaker of the two mixture channels.
pub fn mix_weak3() -> Vec<Vec<f64>> {
    vec![
        vec![0.482644, 0.230909, 0.286447],
        vec![0.198230, 0.515929, 0.285841],
        vec![0.200485, 0.233546, 0.565969],
    ]
}
