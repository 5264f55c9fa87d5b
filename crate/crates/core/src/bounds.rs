//! Closed-form calculators for the theoretical guarantees.
//!
//! Everything here is a pure function of its arguments; the Monte-Carlo
//! harness calls these to overlay reference curves and sanity ceilings on
//! simulated results. All logarithms are natural.
//!
//! The headline result is the stopping-time ceiling for a separable source
//! with gap `delta`:
//!
//! ```text
//!   E[tau] <= max{ N0, N1, 32 ln(1/alpha) / delta^2 } + (L + 2) pi^2 / 6
//! ```
//!
//! where `N0` and `N1` are the burn-in horizons after which two
//! concentration conditions hold for every later step:
//!
//! ```text
//!   N0 = inf{ m >= 1 : sqrt(8 ln(2 n^3) / n) <= delta / 2  for all n >= m }
//!   N1 = inf{ m >= 1 : 2 ln(n) / n <= delta^2 / 32         for all n >= m }
//! ```
//!
//! Both left-hand functions rise to a single peak and then decrease
//! forever, so the infimum is found by scanning past the peak and locating
//! the first crossing on the monotone tail (binary search after an
//! exponential bracket).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{kl_pmf, DivergenceKind, GapReport, LabelPmf};

// ---------------------------------------------------------------------------
// Stopping-time ceiling
// ---------------------------------------------------------------------------

/// Breakdown of the expected-stopping-time upper bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauBoundReport {
    /// Burn-in for the leader-concentration condition.
    pub n0: u64,
    /// Burn-in for the wealth-growth condition.
    pub n1: u64,
    /// `32 ln(1/alpha) / delta^2`.
    pub alpha_term: f64,
    /// `(L + 2) pi^2 / 6`.
    pub constant: f64,
    /// `max{n0, n1, alpha_term} + constant`.
    pub total: f64,
}

/// First index `m >= 1` such that `f(n) <= bound` for all `n >= m`, given
/// that `f` is unimodal (a single peak, then strictly decreasing to 0).
///
/// Scans to the peak, brackets the crossing by doubling, then binary
/// searches the monotone tail. Panics never; returns an error only if the
/// crossing cannot be bracketed below `u64::MAX / 4` (out of double range).
fn first_index_holding_forever(f: impl Fn(u64) -> f64, bound: f64) -> Result<u64> {
    // Locate the peak: advance while the function is still rising.
    let mut peak = 1u64;
    while f(peak + 1) > f(peak) {
        peak += 1;
    }
    // Everything before or at the peak that already satisfies the bound
    // only counts if the condition never breaks afterwards; since f rises
    // to the peak, the condition holds for all n >= m iff it holds at the
    // peak (for m <= peak) or from m on the decreasing tail.
    if f(peak) <= bound {
        // The condition holds at the peak, hence on the whole tail; the
        // infimum is the first prefix index from which it never fails.
        let mut m = peak;
        while m > 1 && f(m - 1) <= bound {
            m -= 1;
        }
        return Ok(m);
    }
    // Bracket the crossing on the decreasing tail.
    let mut hi = peak.saturating_mul(2).max(peak + 1);
    let limit = u64::MAX / 4;
    while f(hi) > bound {
        if hi > limit {
            return Err(Error::InvalidConfig(format!(
                "burn-in exceeds {limit}; bound {bound} unattainable"
            )));
        }
        hi *= 2;
    }
    let mut lo = peak; // f(lo) > bound, f(hi) <= bound
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if f(mid) > bound {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

fn n0_condition(n: u64) -> f64 {
    let n = n as f64;
    (8.0 * (2.0 * n * n * n).ln() / n).sqrt()
}

fn n1_condition(n: u64) -> f64 {
    let n = n as f64;
    2.0 * n.ln() / n
}

/// Expected-stopping-time ceiling for a separable source with minimum gap
/// `delta` over `L + 1` labels.
pub fn tau_upper_bound(alpha: f64, delta: f64, num_alternatives: u64) -> Result<TauBoundReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "alpha = {alpha} must lie strictly inside (0, 1)"
        )));
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "delta = {delta} must lie in (0, 1]"
        )));
    }
    let n0 = first_index_holding_forever(n0_condition, delta / 2.0)?;
    let n1 = first_index_holding_forever(n1_condition, delta * delta / 32.0)?;
    let alpha_term = 32.0 * (1.0 / alpha).ln() / (delta * delta);
    let constant = (num_alternatives as f64 + 2.0) * std::f64::consts::PI.powi(2) / 6.0;
    let total = (n0 as f64).max(n1 as f64).max(alpha_term) + constant;
    Ok(TauBoundReport {
        n0,
        n1,
        alpha_term,
        constant,
        total,
    })
}

// ---------------------------------------------------------------------------
// Training-size and sample-complexity bounds
// ---------------------------------------------------------------------------

/// Minimum training-set size needed to tell every pair of classes apart
/// with error probability `alpha`: `ln(1/alpha)` over the smallest
/// off-diagonal symmetrized divergence.
///
/// `pairwise_j[i][j]` must hold the symmetrized KL divergence between the
/// raw class-`i` and class-`j` distributions; diagonal entries are ignored.
pub fn min_training_size(alpha: f64, pairwise_j: &[Vec<f64>]) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "alpha = {alpha} must lie strictly inside (0, 1)"
        )));
    }
    let l = pairwise_j.len();
    if l < 2 || pairwise_j.iter().any(|row| row.len() != l) {
        return Err(Error::InvalidConfig(
            "pairwise divergence matrix must be square with >= 2 classes".into(),
        ));
    }
    let mut min_j = f64::INFINITY;
    for (i, row) in pairwise_j.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if i != j {
                min_j = min_j.min(v);
            }
        }
    }
    if !(min_j.is_finite() && min_j > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "minimum off-diagonal divergence {min_j} must be finite and > 0 \
             (some class pair is indistinguishable)"
        )));
    }
    Ok((1.0 / alpha).ln() / min_j)
}

/// Sufficient offline sample size per class for the empirical-gap maximizer
/// to pick a truly separable classifier with probability `1 - delta`:
///
/// ```text
///   N >= max{ d, (16 d / gamma^2) ln(16 e / gamma^2)
///               + (16 / gamma^2) ln(4 (L+1)^2 / delta) }
/// ```
///
/// `d` measures the family's capacity and is supplied by the caller.
pub fn vc_sample_size(gamma: f64, d: f64, num_alternatives: u64, delta: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "gamma = {gamma} must lie strictly inside (0, 1)"
        )));
    }
    if !(d >= 1.0) {
        return Err(Error::InvalidConfig(format!("d = {d} must be >= 1")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "delta = {delta} must lie strictly inside (0, 1)"
        )));
    }
    let g2 = gamma * gamma;
    let labels = (num_alternatives + 1) as f64;
    let complexity = (16.0 * d / g2) * (16.0 * std::f64::consts::E / g2).ln()
        + (16.0 / g2) * (4.0 * labels * labels / delta).ln();
    Ok(d.max(complexity))
}

/// Minimax lower bound on the log of any valid e-value after `n` steps when
/// the environment can couple the null and the alternative:
///
/// ```text
///   -( n (max_kl - (B/4) exp(-N M (L+1) delta^2)) + ln 2 ) / (1 - alpha)
/// ```
///
/// All environment constants are caller-supplied.
#[allow(clippy::too_many_arguments)]
pub fn minimax_log_psi_lower(
    n: u64,
    alpha: f64,
    max_kl: f64,
    b: f64,
    n_train: u64,
    m_family: f64,
    num_alternatives: u64,
    delta_param: f64,
) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "alpha = {alpha} must lie strictly inside (0, 1)"
        )));
    }
    if b < 0.0 || m_family < 0.0 {
        return Err(Error::InvalidConfig(
            "capacity constants must be nonnegative".into(),
        ));
    }
    let labels = (num_alternatives + 1) as f64;
    let decay = (-(n_train as f64) * m_family * labels * delta_param * delta_param).exp();
    let inner = n as f64 * (max_kl - b / 4.0 * decay) + std::f64::consts::LN_2;
    Ok(-inner / (1.0 - alpha))
}

// ---------------------------------------------------------------------------
// Mismatch tolerances and gap envelopes
// ---------------------------------------------------------------------------

/// Largest training/deployment divergence under which the guarantees keep
/// holding: half the squared minimum gap for KL, half the minimum gap for
/// total variation.
pub fn mismatch_tolerance(gaps: &GapReport, metric: DivergenceKind) -> Result<f64> {
    let g = gaps.min_pairwise_gap;
    if g <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "minimum pairwise gap {g} must be > 0 (source not separable)"
        )));
    }
    Ok(match metric {
        DivergenceKind::Kl => 0.5 * g * g,
        DivergenceKind::Tv => 0.5 * g,
    })
}

/// Interval certain to contain the deployed-distribution null gap for each
/// alternative label, given a per-row divergence budget `eps`:
/// `[max(gap - s, 0), gap + s]` with `s = sqrt(2 eps)` for KL and `s = 2 eps`
/// for total variation. `eps` may not exceed [`mismatch_tolerance`].
pub fn gap_envelope(
    gaps: &GapReport,
    eps: f64,
    metric: DivergenceKind,
) -> Result<Vec<(f64, f64)>> {
    if eps < 0.0 {
        return Err(Error::InvalidConfig(format!("eps = {eps} must be >= 0")));
    }
    let tolerance = mismatch_tolerance(gaps, metric)?;
    if eps > tolerance {
        return Err(Error::InvalidConfig(format!(
            "eps = {eps} exceeds the mismatch tolerance {tolerance}"
        )));
    }
    let slack = match metric {
        DivergenceKind::Kl => (2.0 * eps).sqrt(),
        DivergenceKind::Tv => 2.0 * eps,
    };
    Ok(gaps
        .null_gaps
        .iter()
        .map(|&gap| ((gap - slack).max(0.0), gap + slack))
        .collect())
}

// ---------------------------------------------------------------------------
// Detection-delay reference
// ---------------------------------------------------------------------------

/// Order-level reference for the best achievable worst-case detection
/// delay at false-alarm budget `alpha`: `ln(1/alpha) / KL(post || pre)`.
/// A reference line, not a certified bound.
pub fn lorden_delay_lower(alpha: f64, post_row: &LabelPmf, pre_row: &LabelPmf) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "alpha = {alpha} must lie strictly inside (0, 1)"
        )));
    }
    let kl = kl_pmf(post_row, pre_row)?;
    if kl == 0.0 {
        return Err(Error::InvalidConfig(
            "pre- and post-change rows are identical (zero divergence)".into(),
        ));
    }
    if !kl.is_finite() {
        return Err(Error::InvalidConfig(
            "post-change row puts mass where the pre-change row has none \
             (infinite divergence)"
                .into(),
        ));
    }
    Ok((1.0 / alpha).ln() / kl)
}

// ---------------------------------------------------------------------------
// Quadratic-in-the-gap fit of stopping times
// ---------------------------------------------------------------------------

/// A fitted `tau ~ c ln(1/alpha) / delta^2` curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticFit {
    /// The scaling constant averaged over the calibration points.
    pub c: f64,
    /// `(alpha, c ln(1/alpha) / delta^2)` pairs on a fine grid.
    pub curve: Vec<(f64, f64)>,
}

/// Calibrates the scale constant from observed mean stopping times and
/// evaluates the reference curve on a geometric `alpha` grid spanning the
/// calibration range.
///
/// The constant is `c = avg_i [ mean_tau_i * delta^2 / ln(1/(alpha_i delta)) ]`;
/// the plotted curve is `c * ln(1/alpha) / delta^2` (the gap enters the
/// calibration log but not the curve's — this asymmetry is intentional and
/// matches the reference recipe).
pub fn quadratic_fit(
    alphas: &[f64],
    mean_taus: &[f64],
    delta: f64,
    fine_grid: usize,
) -> Result<QuadraticFit> {
    if alphas.is_empty() || alphas.len() != mean_taus.len() {
        return Err(Error::InvalidConfig(format!(
            "need equal, nonempty alpha/mean_tau lists (got {} and {})",
            alphas.len(),
            mean_taus.len()
        )));
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "delta = {delta} must lie in (0, 1]"
        )));
    }
    if fine_grid < 2 {
        return Err(Error::InvalidConfig("fine_grid must be >= 2".into()));
    }
    for &a in alphas {
        let scaled = a * delta;
        if !(scaled > 0.0 && scaled < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha * delta = {scaled} must lie strictly inside (0, 1)"
            )));
        }
    }
    let d2 = delta * delta;
    let c = alphas
        .iter()
        .zip(mean_taus)
        .map(|(&a, &tau)| tau * d2 / (1.0 / (a * delta)).ln())
        .sum::<f64>()
        / alphas.len() as f64;
    let lo = alphas.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = alphas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (log_lo, log_hi) = (lo.ln(), hi.ln());
    let curve = (0..fine_grid)
        .map(|j| {
            let t = j as f64 / (fine_grid - 1) as f64;
            let a = (log_lo + t * (log_hi - log_lo)).exp();
            (a, c * (1.0 / a).ln() / d2)
        })
        .collect();
    Ok(QuadraticFit { c, curve })
}

// ---------------------------------------------------------------------------
