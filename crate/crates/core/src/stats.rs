//! Label-distribution primitives: pmfs over classifier outputs, confusion
//! matrices, separability gaps, and the divergences used by the mismatch
//! analysis.
//!
//! Everything downstream (the betting engine, the change detector, the bound
//! calculators) sees a classifier only through its induced label distribution
//! `p_theta[m] = P(g(X) = m | X ~ P_theta)`, i.e. one row of a confusion
//! matrix. Separability — each row's diagonal entry strictly dominating the
//! rest of that row — is the single structural assumption behind every
//! power-one and identification guarantee in this crate, so the gap report
//! produced here is consumed almost everywhere else.
//!
//! Conventions:
//! - All divergences use the natural logarithm (nats).
//! - `0 * ln(0 / q) = 0`; `p > 0` against `q = 0` yields `+inf` rather than an
//!   error, so mismatch-set membership checks can return `false` cleanly.
//! - Pmf inputs are validated, never silently renormalized; use
//!   [`LabelPmf::normalized`] when renormalization is intended.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};

/// Tolerance on pmf normalization: entries must sum to 1 within this.
pub const PMF_SUM_TOLERANCE: f64 = 1e-9;

// ---------------------------------------------------------------------------
// LabelPmf
// ---------------------------------------------------------------------------

/// A probability mass function over the `L + 1` classifier output labels.
///
/// Label `0` is reserved for the null class throughout the crate; labels
/// `1..=L` are the alternatives. Validated on construction: every entry in
/// `[0, 1]`, entries summing to 1 within [`PMF_SUM_TOLERANCE`], and at least
/// two labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LabelPmf {
    probs: Vec<f64>,
}

impl LabelPmf {
    /// Validates and wraps a probability vector.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::InvalidPmf(format!(
                "need at least 2 labels, got {}",
                probs.len()
            )));
        }
        for (i, &p) in probs.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) || !p.is_finite() {
                return Err(Error::InvalidPmf(format!("entry {i} = {p} outside [0, 1]")));
            }
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PMF_SUM_TOLERANCE {
            return Err(Error::InvalidPmf(format!(
                "entries sum to {sum}, expected 1 within {PMF_SUM_TOLERANCE:e}"
            )));
        }
        Ok(Self { probs })
    }

    /// Explicitly renormalizes a nonnegative weight vector into a pmf.
    pub fn normalized(weights: Vec<f64>) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum.is_finite() && sum > 0.0) {
            return Err(Error::InvalidPmf(format!("weights sum to {sum}, cannot normalize")));
        }
        Self::new(weights.into_iter().map(|w| w / sum).collect())
    }

    /// The probabilities, indexed by label.
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Number of labels `L + 1`.
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        false // guaranteed >= 2 labels by construction
    }
}

impl TryFrom<Vec<f64>> for LabelPmf {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<LabelPmf> for Vec<f64> {
    fn from(p: LabelPmf) -> Vec<f64> {
        p.probs
    }
}

impl std::ops::Index<usize> for LabelPmf {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.probs[i]
    }
}

// ---------------------------------------------------------------------------
// ConfusionMatrix
// ---------------------------------------------------------------------------

/// A square matrix of label distributions: row `theta` is the distribution of
/// the classifier output when inputs are drawn from class `theta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ConfusionMatrixRepr", into = "ConfusionMatrixRepr")]
pub struct ConfusionMatrix {
    rows: Vec<LabelPmf>,
}

/// Serialized form: `{"rows": [[...], [...]]}`.
#[derive(Serialize, Deserialize)]
struct ConfusionMatrixRepr {
    rows: Vec<Vec<f64>>,
}

impl ConfusionMatrix {
    /// Validates a row-major matrix: square, each row a valid pmf.
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidMatrix("no rows".into()));
        }
        let n = rows.len();
        let pmf_rows = rows
            .into_iter()
            .enumerate()
            .map(|(i, row)| {
                if row.len() != n {
                    return Err(Error::InvalidMatrix(format!(
                        "row {i} has {} entries, expected {n} (square matrix)",
                        row.len()
                    )));
                }
                LabelPmf::new(row)
                    .map_err(|e| Error::InvalidMatrix(format!("row {i}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { rows: pmf_rows })
    }

    /// Number of labels `L + 1` (also the number of rows).
    pub fn num_labels(&self) -> usize {
        self.rows.len()
    }

    /// The label distribution for inputs from class `theta`.
    pub fn row(&self, theta: usize) -> &LabelPmf {
        &self.rows[theta]
    }

    pub fn rows(&self) -> &[LabelPmf] {
        &self.rows
    }

    /// Entry `p_theta[m]`.
    pub fn entry(&self, theta: usize, m: usize) -> f64 {
        self.rows[theta][m]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("confusion matrix serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// One row per line, comma-separated. Floats are printed in shortest
    /// round-trip form, so write/read cycles are lossless.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            let line: Vec<String> = row.probs().iter().map(|p| format!("{p}")).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|cell| {
                    cell.trim().parse::<f64>().map_err(|e| {
                        Error::InvalidMatrix(format!("line {}: {e}", lineno + 1))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        Self::new(rows)
    }

    /// Reads either serialized form from a file, sniffing JSON by a leading
    /// `{` and falling back to CSV otherwise.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if text.trim_start().starts_with('{') {
            Self::from_json(&text)
        } else {
            Self::from_csv(&text)
        }
    }
}

impl TryFrom<ConfusionMatrixRepr> for ConfusionMatrix {
    type Error = Error;
    fn try_from(r: ConfusionMatrixRepr) -> Result<Self> {
        Self::new(r.rows)
    }
}

impl From<ConfusionMatrix> for ConfusionMatrixRepr {
    fn from(cm: ConfusionMatrix) -> ConfusionMatrixRepr {
        ConfusionMatrixRepr {
            rows: cm.rows.into_iter().map(Vec::from).collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// Separability gaps
// ---------------------------------------------------------------------------

/// The diagonal-dominance margins of a confusion matrix.
///
/// `pairwise_gaps[theta][m] = p_theta[theta] - p_theta[m]` measures how much
/// class `theta`'s own label beats label `m` on `theta`-distributed inputs;
/// `null_gaps[theta]` is the margin against the null label specifically,
/// which sets the stopping-time scale of the sequential test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    /// `pairwise_gaps[theta][m] = p_theta[theta] - p_theta[m]`; zero on the diagonal.
    pub pairwise_gaps: Vec<Vec<f64>>,
    /// `null_gaps[theta] = pairwise_gaps[theta][0]`; zero at `theta = 0`.
    pub null_gaps: Vec<f64>,
    /// Minimum of `pairwise_gaps[theta][m]` over `theta != m`.
    pub min_pairwise_gap: f64,
}

/// Computes every diagonal-minus-off-diagonal margin of `cm`.
pub fn gaps(cm: &ConfusionMatrix) -> GapReport {
    let n = cm.num_labels();
    let mut pairwise = vec![vec![0.0; n]; n];
    let mut min_gap = f64::INFINITY;
    for theta in 0..n {
        let diag = cm.entry(theta, theta);
        for m in 0..n {
            let gap = diag - cm.entry(theta, m);
            pairwise[theta][m] = gap;
            if m != theta {
                min_gap = min_gap.min(gap);
            }
        }
    }
    let null_gaps = (0..n).map(|theta| pairwise[theta][0]).collect();
    GapReport {
        pairwise_gaps: pairwise,
        null_gaps,
        min_pairwise_gap: min_gap,
    }
}

/// True iff every row's diagonal entry strictly exceeds every off-diagonal
/// entry of that row. Ties count as non-separable.
pub fn is_separable(cm: &ConfusionMatrix) -> bool {
    gaps(cm).min_pairwise_gap > 0.0
}

// ---------------------------------------------------------------------------
// Divergences
// ---------------------------------------------------------------------------

/// Which divergence a mismatch budget is measured in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DivergenceKind {
    Kl,
    Tv,
}

/// KL divergence `sum_i p[i] ln(p[i]/q[i])` in nats.
///
/// Terms with `p[i] = 0` contribute zero. If some `q[i] = 0 < p[i]` the
/// result is `+inf` (not an error). Tiny negative rounding residue for
/// near-identical inputs is clamped to zero.
pub fn kl_pmf(p: &LabelPmf, q: &LabelPmf) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::InvalidPmf(format!(
            "length mismatch: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    let mut sum = 0.0;
    for (&pi, &qi) in p.probs().iter().zip(q.probs()) {
        if pi > 0.0 {
            if qi <= 0.0 {
                return Ok(f64::INFINITY);
            }
            sum += pi * (pi / qi).ln();
        }
    }
    Ok(sum.max(0.0))
}

/// Total-variation distance: half the L1 distance, in `[0, 1]`.
pub fn tv_pmf(p: &LabelPmf, q: &LabelPmf) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::InvalidPmf(format!(
            "length mismatch: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    let l1: f64 = p
        .probs()
        .iter()
        .zip(q.probs())
        .map(|(&pi, &qi)| (pi - qi).abs())
        .sum();
    Ok(0.5 * l1)
}

/// Symmetrized KL (Jeffreys) divergence: `kl(p, q) + kl(q, p)`.
pub fn symmetrized_kl_pmf(p: &LabelPmf, q: &LabelPmf) -> Result<f64> {
    Ok(kl_pmf(p, q)? + kl_pmf(q, p)?)
}

/// KL divergence between two Gaussians with the same diagonal covariance:
/// `sum_i (mu_p[i] - mu_q[i])^2 / (2 var[i])`. Symmetric in the means, so it
/// doubles as half the Jeffreys divergence for this family.
pub fn kl_gaussian_diag(mu_p: &[f64], mu_q: &[f64], var: &[f64]) -> Result<f64> {
    if mu_p.len() != mu_q.len() || mu_p.len() != var.len() {
        return Err(Error::InvalidConfig(format!(
            "dimension mismatch: means {} / {}, variances {}",
            mu_p.len(),
            mu_q.len(),
            var.len()
        )));
    }
    let mut sum = 0.0;
    for i in 0..var.len() {
        if !(var[i] > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "variance {} = {} must be strictly positive",
                i, var[i]
            )));
        }
        let d = mu_p[i] - mu_q[i];
        sum += d * d / (2.0 * var[i]);
    }
    Ok(sum)
}

/// True iff the chosen divergence between every corresponding row pair of the
/// two matrices is at most `eps` — membership in the `eps`-mismatch set.
pub fn mismatch_within(
    train: &ConfusionMatrix,
    test: &ConfusionMatrix,
    eps: f64,
    metric: DivergenceKind,
) -> Result<bool> {
    if train.num_labels() != test.num_labels() {
        return Err(Error::InvalidMatrix(format!(
            "shape mismatch: {} vs {} labels",
            train.num_labels(),
            test.num_labels()
        )));
    }
    if !(eps >= 0.0) {
        return Err(Error::InvalidConfig(format!("eps = {eps} must be >= 0")));
    }
    for (p, q) in train.rows().iter().zip(test.rows()) {
        let div = match metric {
            DivergenceKind::Kl => kl_pmf(p, q)?,
            DivergenceKind::Tv => tv_pmf(p, q)?,
        };
        if div > eps {
            return Ok(false);
        }
    }
    Ok(true)
}

// ---------------------------------------------------------------------------
