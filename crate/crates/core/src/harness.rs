//! Monte-Carlo experiment harness: seeded trial grids, recipe execution,
//! and CSV/JSON emission.
//!
//! An experiment is a declarative [`ExperimentConfig`] (usually a JSON file)
//! naming a mode, a label source, an `alpha` grid, and trial counts.
//! [`run_experiment`] executes every `(alpha, trial)` cell — trials within a
//! cell run in parallel — and writes three files into the output directory:
//!
//! * `results.csv` — one row per trial (schema depends on the mode),
//! * `summary.json` — per-`alpha` aggregates, identification ratios for
//!   every label (zeros included), and the fitted scaling curve,
//! * `meta.json` — config echo, generator id, package version, timestamp.
//!
//! Reproducibility contract: rerunning the same config + seed reproduces
//! `results.csv` and `summary.json` byte for byte. The only
//! run-dependent value (the creation timestamp) is quarantined in
//! `meta.json`. Label streams are derived per `(seed, trial, alpha_index,
//! tag)` through a splitmix64 key schedule feeding a counter-based stream
//! cipher RNG; the generator id recorded in the metadata names this scheme
//! so future implementations can either reproduce it or flag a change.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{
    gap_envelope, lorden_delay_lower, min_training_size, minimax_log_psi_lower, mismatch_tolerance,
    quadratic_fit, tau_upper_bound, vc_sample_size, QuadraticFit,
};
use crate::detector::run_detector;
use crate::eprocess::{mixture_log_wealth, EProcessState, WealthEvaluator};
use crate::error::{Error, Result};
use crate::sequential::{run_test, TestConfig};
use crate::sim::{
    erm_max_gap, estimate_confusion, train_centroid, GaussianTupleSpec, OfflineDataset,
    PmfSampler, ThresholdClassifier,
};
use crate::stats::{gaps, is_separable, ConfusionMatrix, DivergenceKind, GapReport, LabelPmf};

// ---------------------------------------------------------------------------
// Seed derivation
// ---------------------------------------------------------------------------

/// Names the stream-derivation scheme recorded in `meta.json`: splitmix64
/// key schedule over `(seed, trial, alpha_index, tag)`, seeding ChaCha8.
pub const GENERATOR_ID: &str = "splitmix64-chacha8/v1";

/// Trial index reserved for source resolution (training/evaluation draws),
/// so those streams never collide with per-trial label streams.
const SOURCE_RESOLUTION_TRIAL: u64 = u64::MAX;

/// One splitmix64 output step folded over an input word.
fn mix(state: u64, word: u64) -> u64 {
    let mut z = state
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(word.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic 64-bit stream key for one `(seed, trial, alpha, tag)` cell.
pub fn derive_stream_seed(base_seed: u64, trial: u64, alpha_index: u64, tag: u64) -> u64 {
    let mut h = mix(base_seed, 0x6576_6572_7465_7374); // domain constant
    h = mix(h, trial);
    h = mix(h, alpha_index);
    h = mix(h, tag);
    h
}

/// RNG for one sub-stream of a trial (`tag` separates e.g. mixture channels).
pub fn derive_tagged_rng(base_seed: u64, trial: u64, alpha_index: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_stream_seed(base_seed, trial, alpha_index, tag))
}

/// RNG for one `(trial, alpha)` cell.
pub fn derive_trial_rng(base_seed: u64, trial: u64, alpha_index: u64) -> ChaCha8Rng {
    derive_tagged_rng(base_seed, trial, alpha_index, 0)
}

// ---------------------------------------------------------------------------
// Alpha grids
// ---------------------------------------------------------------------------

/// `n` evenly spaced points from `lo` to `hi` inclusive.
pub fn linear_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if n == 0 || !lo.is_finite() || !hi.is_finite() || lo > hi {
        return Err(Error::InvalidConfig(format!(
            "bad linear grid: lo = {lo}, hi = {hi}, n = {n}"
        )));
    }
    if n == 1 {
        return Ok(vec![lo]);
    }
    Ok((0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect())
}

/// `n` logarithmically spaced points from `lo` to `hi` inclusive.
pub fn geometric_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if n == 0 || !(lo > 0.0) || !(hi >= lo) || !hi.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "bad geometric grid: lo = {lo}, hi = {hi}, n = {n}"
        )));
    }
    if n == 1 {
        return Ok(vec![lo]);
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect())
}

/// The default experiment grid: 10 geometric levels from 1e-3 to 1e-1.
pub fn default_alpha_grid() -> Vec<f64> {
    geometric_grid(1e-3, 1e-1, 10).expect("static grid parameters are valid")
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// What kind of experiment to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Sequential testing on one label source.
    Test,
    /// Change-point detection on a pre/post label source.
    Detect,
    /// Weighted mixture of several label channels sharing one class draw.
    Mixture,
    /// Repeated empirical-gap maximization over a threshold family.
    Erm,
    /// Evaluate a closed-form bound (no trials).
    Bounds,
}

fn default_train_per_class() -> usize {
    10_000
}

fn default_eval_per_class() -> usize {
    100_000
}

/// Where trial labels come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceSpec {
    /// A confusion matrix given inline as rows or by file path (JSON or CSV).
    Confusion {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        path: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rows: Option<Vec<Vec<f64>>>,
    },
    /// Class-conditional Gaussians: a nearest-centroid classifier is trained
    /// on fresh offline draws and its induced confusion matrix estimated,
    /// exercising the full train-then-test pipeline.
    Gaussian {
        means: Vec<Vec<f64>>,
        variances: Vec<f64>,
        #[serde(default = "default_train_per_class")]
        train_per_class: usize,
        #[serde(default = "default_eval_per_class")]
        eval_per_class: usize,
    },
}

impl SourceSpec {
    /// Rewrites a relative confusion-matrix path against `base` (the config
    /// file's directory).
    fn resolve_paths(&mut self, base: &Path) {
        if let SourceSpec::Confusion { path: Some(p), .. } = self {
            if p.is_relative() {
                *p = base.join(&p);
            }
        }
    }

    /// The Gaussian tuple behind this source, if it is one.
    pub fn gaussian(&self) -> Result<GaussianTupleSpec> {
        match self {
            SourceSpec::Gaussian {
                means, variances, ..
            } => GaussianTupleSpec::new(means.clone(), variances.clone()),
            SourceSpec::Confusion { .. } => Err(Error::InvalidConfig(
                "this operation requires a gaussian source".into(),
            )),
        }
    }

    /// Resolves the source to the confusion matrix that drives label
    /// streams. Gaussian sources consume a dedicated derived RNG (reserved
    /// trial index, `channel` tag) so resolution is deterministic and
    /// independent of the trial streams.
    pub fn confusion(&self, base_seed: u64, channel: u64) -> Result<ConfusionMatrix> {
        match self {
            SourceSpec::Confusion { path, rows } => match (path, rows) {
                (Some(p), None) => ConfusionMatrix::from_path(p),
                (None, Some(rows)) => ConfusionMatrix::new(rows.clone()),
                (Some(_), Some(_)) => Err(Error::InvalidConfig(
                    "confusion source: give either path or rows, not both".into(),
                )),
                (None, None) => Err(Error::InvalidConfig(
                    "confusion source: give path or rows".into(),
                )),
            },
            SourceSpec::Gaussian {
                train_per_class,
                eval_per_class,
                ..
            } => {
                let spec = self.gaussian()?;
                let mut rng =
                    derive_tagged_rng(base_seed, SOURCE_RESOLUTION_TRIAL, 0, channel);
                let data = OfflineDataset::sample_from(&spec, *train_per_class, &mut rng)?;
                let classifier = train_centroid(&data)?;
                estimate_confusion(&classifier, &spec, *eval_per_class, &mut rng)
            }
        }
    }
}

fn default_erm_thresholds() -> Vec<f64> {
    linear_grid(-2.0, 2.0, 41).expect("static grid parameters are valid")
}

fn default_erm_repeats() -> u64 {
    200
}

fn default_erm_train() -> usize {
    2000
}

/// Settings for the repeated gap-maximization experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErmSettings {
    /// Candidate 1-D thresholds forming the finite family, in family order.
    #[serde(default = "default_erm_thresholds")]
    pub thresholds: Vec<f64>,
    /// Independent offline datasets to draw.
    #[serde(default = "default_erm_repeats")]
    pub repeats: u64,
    /// Offline samples per class in each repeat.
    #[serde(default = "default_erm_train")]
    pub train_per_class: usize,
}

impl Default for ErmSettings {
    fn default() -> Self {
        Self {
            thresholds: default_erm_thresholds(),
            repeats: default_erm_repeats(),
            train_per_class: default_erm_train(),
        }
    }
}

/// Which closed-form bound to evaluate in `bounds` mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundsRequest {
    /// Expected-stopping-time ceiling.
    Tau { alpha: f64, delta: f64, l: u64 },
    /// Offline sample-complexity sufficient condition.
    Vc {
        gamma: f64,
        d: f64,
        l: u64,
        fail_prob: f64,
    },
    /// Minimax lower bound on the achievable log e-value.
    Minimax {
        n: u64,
        alpha: f64,
        max_kl: f64,
        capacity_b: f64,
        n_train: u64,
        m_family: f64,
        l: u64,
        delta_param: f64,
    },
    /// Detection-delay reference line.
    Lorden {
        alpha: f64,
        post: Vec<f64>,
        pre: Vec<f64>,
    },
    /// Training-size lower bound from pairwise symmetrized divergences.
    MinTraining {
        alpha: f64,
        pairwise_j: Vec<Vec<f64>>,
    },
    /// Mismatch tolerance (and gap envelope when `eps` is given) of a matrix.
    Mismatch {
        rows: Vec<Vec<f64>>,
        metric: DivergenceKind,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        eps: Option<f64>,
    },
}

/// Evaluates a bound request to a JSON report (sorted keys, deterministic).
pub fn evaluate_bounds(request: &BoundsRequest) -> Result<serde_json::Value> {
    use serde_json::json;
    Ok(match request {
        BoundsRequest::Tau { alpha, delta, l } => {
            serde_json::to_value(tau_upper_bound(*alpha, *delta, *l)?)?
        }
        BoundsRequest::Vc {
            gamma,
            d,
            l,
            fail_prob,
        } => json!({ "sample_size": vc_sample_size(*gamma, *d, *l, *fail_prob)? }),
        BoundsRequest::Minimax {
            n,
            alpha,
            max_kl,
            capacity_b,
            n_train,
            m_family,
            l,
            delta_param,
        } => json!({
            "log_psi_lower": minimax_log_psi_lower(
                *n, *alpha, *max_kl, *capacity_b, *n_train, *m_family, *l, *delta_param,
            )?
        }),
        BoundsRequest::Lorden { alpha, post, pre } => {
            let post = LabelPmf::new(post.clone())?;
            let pre = LabelPmf::new(pre.clone())?;
            json!({ "delay_lower": lorden_delay_lower(*alpha, &post, &pre)? })
        }
        BoundsRequest::MinTraining { alpha, pairwise_j } => {
            json!({ "min_training_size": min_training_size(*alpha, pairwise_j)? })
        }
        BoundsRequest::Mismatch { rows, metric, eps } => {
            let report = gaps(&ConfusionMatrix::new(rows.clone())?);
            let tolerance = mismatch_tolerance(&report, *metric)?;
            match eps {
                Some(eps) => json!({
                    "tolerance": tolerance,
                    "envelope": gap_envelope(&report, *eps, *metric)?,
                    "gaps": serde_json::to_value(&report)?,
                }),
                None => json!({
                    "tolerance": tolerance,
                    "gaps": serde_json::to_value(&report)?,
                }),
            }
        }
    })
}

fn default_trials() -> u64 {
    300
}

fn default_max_steps() -> u64 {
    100_000
}

fn default_seed() -> u64 {
    7
}

/// Declarative description of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    /// Label source for `test`, `detect`, and `erm` modes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<SourceSpec>,
    /// Label channels for `mixture` mode (each with its own classifier, all
    /// driven by the same underlying class draw).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub channels: Vec<SourceSpec>,
    /// Mixture weights, one per channel, summing to 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default = "default_alpha_grid")]
    pub alpha_grid: Vec<f64>,
    #[serde(default = "default_trials")]
    pub trials: u64,
    #[serde(default = "default_max_steps")]
    pub max_steps: u64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Which class generates the stream (0 = null) in `test`/`mixture` mode.
    #[serde(default)]
    pub theta: usize,
    /// First step drawing post-change labels in `detect` mode; absent means
    /// a pure pre-change stream (run-length measurement).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub change_at: Option<u64>,
    /// Pre-change class in `detect` mode (default 0).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pre: Option<usize>,
    /// Post-change class in `detect` mode; required when `change_at` is set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub post: Option<usize>,
    /// Wealth evaluator for `test`/`mixture` runs.
    #[serde(default)]
    pub evaluator: WealthEvaluator,
    /// Detector window cap for `detect` mode (absent = keep all windows).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prune_cap: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub erm: Option<ErmSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundsRequest>,
}

impl ExperimentConfig {
    /// Loads a config from JSON, resolving relative source paths against the
    /// file's directory.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut config: ExperimentConfig =
            serde_json::from_str(&fs::read_to_string(path)?)?;
        if let Some(base) = path.parent() {
            if let Some(source) = &mut config.source {
                source.resolve_paths(base);
            }
            for channel in &mut config.channels {
                channel.resolve_paths(base);
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha_grid.is_empty() {
            return Err(Error::InvalidConfig("alpha_grid is empty".into()));
        }
        for &a in &self.alpha_grid {
            if !(a > 0.0 && a < 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "alpha = {a} must lie strictly inside (0, 1)"
                )));
            }
        }
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be >= 1".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidConfig("max_steps must be >= 1".into()));
        }
        match self.mode {
            Mode::Test => {
                if self.source.is_none() {
                    return Err(Error::InvalidConfig("test mode needs a source".into()));
                }
            }
            Mode::Detect => {
                if self.source.is_none() {
                    return Err(Error::InvalidConfig("detect mode needs a source".into()));
                }
                if let Some(t) = self.change_at {
                    if t == 0 {
                        return Err(Error::InvalidConfig(
                            "change_at is 1-based; use 1 for an immediate change".into(),
                        ));
                    }
                    if self.post.is_none() {
                        return Err(Error::InvalidConfig(
                            "detect mode with change_at needs a post class".into(),
                        ));
                    }
                }
            }
            Mode::Mixture => {
                if self.channels.len() < 2 {
                    return Err(Error::InvalidConfig(
                        "mixture mode needs at least 2 channels".into(),
                    ));
                }
                let weights = self.weights.as_ref().ok_or_else(|| {
                    Error::InvalidConfig("mixture mode needs weights".into())
                })?;
                if weights.len() != self.channels.len() {
                    return Err(Error::InvalidConfig(format!(
                        "{} weights for {} channels",
                        weights.len(),
                        self.channels.len()
                    )));
                }
            }
            Mode::Erm => {
                let source = self.source.as_ref().ok_or_else(|| {
                    Error::InvalidConfig("erm mode needs a gaussian source".into())
                })?;
                source.gaussian()?;
            }
            Mode::Bounds => {
                if self.bounds.is_none() {
                    return Err(Error::InvalidConfig(
                        "bounds mode needs a bounds request".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Summaries
// ---------------------------------------------------------------------------

/// Aggregates for one `alpha` level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSummary {
    pub alpha: f64,
    pub trials: u64,
    /// Trials that stopped (test/mixture modes).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stopped: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_fraction: Option<f64>,
    /// Mean stopping time over stopped trials.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_tau: Option<f64>,
    /// Standard error of the mean stopping time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub se_tau: Option<f64>,
    /// `identification_ratios[k]`: fraction of trials whose final backed
    /// label was `k` — reported for every label, zeros included.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identification_ratios: Option<Vec<f64>>,
    /// Mixture mode: mean single-classifier stopping time per channel.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel_mean_tau: Option<Vec<Option<f64>>>,
    /// Detect mode: trials that alarmed within the horizon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alarmed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_alarm_time: Option<f64>,
    /// Mean of `(alarm - change_at)^+` over alarmed trials.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_delay: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub se_delay: Option<f64>,
}

impl AlphaSummary {
    fn new(alpha: f64, trials: u64) -> Self {
        Self {
            alpha,
            trials,
            stopped: None,
            stop_fraction: None,
            mean_tau: None,
            se_tau: None,
            identification_ratios: None,
            channel_mean_tau: None,
            alarmed: None,
            mean_alarm_time: None,
            mean_delay: None,
            se_delay: None,
        }
    }
}

/// Aggregates for the gap-maximization mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErmSummary {
    pub repeats: u64,
    /// Fraction of repeats whose chosen classifier separates the true
    /// distributions.
    pub separable_fraction: f64,
    pub mean_empirical_gap: f64,
    pub mean_threshold: f64,
}

/// Everything `summary.json` holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<usize>,
    /// Gap report of the resolved source matrix.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap_report: Option<GapReport>,
    /// Mixture mode: gap report per channel.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel_gaps: Option<Vec<GapReport>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_alpha: Vec<AlphaSummary>,
    /// Fitted `c ln(1/alpha) / gap^2` scaling curve, when computable.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<QuadraticFit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub erm: Option<ErmSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<serde_json::Value>,
}

impl Summary {
    fn new(mode: Mode) -> Self {
        Self {
            mode,
            alpha_grid: None,
            theta: None,
            gap_report: None,
            channel_gaps: None,
            warnings: Vec::new(),
            per_alpha: Vec::new(),
            fit: None,
            erm: None,
            bounds: None,
        }
    }
}

/// `meta.json` contents. The timestamp lives here and only here, keeping
/// `results.csv`/`summary.json` byte-reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub package: String,
    pub version: String,
    pub generator_id: String,
    pub seed: u64,
    pub created_unix: u64,
    pub config: ExperimentConfig,
}

/// Paths and parsed summary of a finished run.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub out_dir: PathBuf,
    /// Absent in `bounds` mode (no trials, no rows).
    pub results_path: Option<PathBuf>,
    pub summary_path: PathBuf,
    pub meta_path: PathBuf,
    pub summary: Summary,
}

// ---------------------------------------------------------------------------
// Small numeric helpers
// ---------------------------------------------------------------------------

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Standard error of the mean (sample standard deviation over sqrt n).
fn standard_error(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let m = mean(values)?;
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>()
        / (values.len() - 1) as f64;
    Some((var / values.len() as f64).sqrt())
}

fn push_optional(line: &mut String, value: Option<impl std::fmt::Display>) {
    match value {
        Some(v) => {
            let _ = write!(line, ",{v}");
        }
        None => line.push(','),
    }
}

// ---------------------------------------------------------------------------
// Mode runners
// ---------------------------------------------------------------------------

struct ModeOutput {
    csv: Option<String>,
    summary: Summary,
}

fn separability_warning(matrix: &ConfusionMatrix, what: &str) -> Option<String> {
    if is_separable(matrix) {
        None
    } else {
        Some(format!(
            "{what} is not separable (min pairwise gap = {}); the run stays \
             level-alpha but may never stop",
            gaps(matrix).min_pairwise_gap
        ))
    }
}

fn check_label(matrix: &ConfusionMatrix, label: usize, what: &str) -> Result<()> {
    if label >= matrix.num_labels() {
        return Err(Error::InvalidConfig(format!(
            "{what} = {label} out of range 0..{}",
            matrix.num_labels()
        )));
    }
    Ok(())
}

/// Attaches the fitted scaling curve when every `alpha` produced a mean and
/// the gap admits the calibration; otherwise records a warning.
fn attach_fit(
    summary: &mut Summary,
    alphas: &[f64],
    means: &[Option<f64>],
    delta: f64,
    what: &str,
) {
    let collected: Vec<(f64, f64)> = alphas
        .iter()
        .zip(means)
        .filter_map(|(&a, m)| m.map(|m| (a, m)))
        .collect();
    if collected.len() != alphas.len() {
        summary.warnings.push(format!(
            "scaling fit skipped: some alpha levels had no {what}"
        ));
        return;
    }
    if !(delta > 0.0 && delta <= 1.0) || alphas.iter().any(|&a| a * delta >= 1.0) {
        summary.warnings.push(format!(
            "scaling fit skipped: gap {delta} outside the calibration domain"
        ));
        return;
    }
    let (a, m): (Vec<f64>, Vec<f64>) = collected.into_iter().unzip();
    match quadratic_fit(&a, &m, delta, 100) {
        Ok(fit) => summary.fit = Some(fit),
        Err(e) => summary.warnings.push(format!("scaling fit skipped: {e}")),
    }
}

fn run_test_mode(config: &ExperimentConfig) -> Result<ModeOutput> {
    let source = config.source.as_ref().expect("validated");
    let matrix = source.confusion(config.seed, 0)?;
    check_label(&matrix, config.theta, "theta")?;
    let num_labels = matrix.num_labels();
    let row = matrix.row(config.theta).clone();

    let mut summary = Summary::new(Mode::Test);
    summary.alpha_grid = Some(config.alpha_grid.clone());
    summary.theta = Some(config.theta);
    let report = gaps(&matrix);
    if let Some(w) = separability_warning(&matrix, "source matrix") {
        summary.warnings.push(w);
    }
    let delta = report.null_gaps[config.theta];
    summary.gap_report = Some(report);

    let mut csv = String::from("trial,alpha,stopped,tau,j_hat,log_wealth\n");
    for (alpha_index, &alpha) in config.alpha_grid.iter().enumerate() {
        let test_config = TestConfig {
            alpha,
            max_steps: config.max_steps,
            evaluator: config.evaluator,
            record_trajectory: false,
        };
        test_config.validate()?;
        let results = (0..config.trials)
            .into_par_iter()
            .map(|trial| {
                let rng = derive_trial_rng(config.seed, trial, alpha_index as u64);
                let stream = crate::sim::multinomial_stream(&row, rng);
                run_test(num_labels, stream, &test_config)
            })
            .collect::<Result<Vec<_>>>()?;

        let mut cell = AlphaSummary::new(alpha, config.trials);
        let mut taus = Vec::new();
        let mut ratios = vec![0.0; num_labels];
        for (trial, r) in results.iter().enumerate() {
            let mut line = format!("{trial},{alpha},{}", r.stopped);
            push_optional(&mut line, r.stopped.then_some(r.tau));
            let _ = write!(line, ",{},{}", r.leader_at_stop, r.final_log_wealth);
            csv.push_str(&line);
            csv.push('\n');
            if r.stopped {
                taus.push(r.tau as f64);
            }
            ratios[r.leader_at_stop] += 1.0 / config.trials as f64;
        }
        cell.stopped = Some(taus.len() as u64);
        cell.stop_fraction = Some(taus.len() as f64 / config.trials as f64);
        cell.mean_tau = mean(&taus);
        cell.se_tau = standard_error(&taus);
        cell.identification_ratios = Some(ratios);
        summary.per_alpha.push(cell);
    }

    let means: Vec<Option<f64>> = summary.per_alpha.iter().map(|c| c.mean_tau).collect();
    attach_fit(&mut summary, &config.alpha_grid, &means, delta, "stopped trials");
    Ok(ModeOutput {
        csv: Some(csv),
        summary,
    })
}

fn run_detect_mode(config: &ExperimentConfig) -> Result<ModeOutput> {
    let source = config.source.as_ref().expect("validated");
    let matrix = source.confusion(config.seed, 0)?;
    let pre = config.pre.unwrap_or(0);
    check_label(&matrix, pre, "pre")?;
    let post = match config.change_at {
        Some(_) => {
            let post = config.post.expect("validated");
            check_label(&matrix, post, "post")?;
            Some(post)
        }
        None => None,
    };
    let num_labels = matrix.num_labels();
    let pre_row = matrix.row(pre).clone();
    let post_row = post.map(|p| matrix.row(p).clone());

    let mut summary = Summary::new(Mode::Detect);
    summary.alpha_grid = Some(config.alpha_grid.clone());
    let report = gaps(&matrix);
    if let Some(w) = separability_warning(&matrix, "source matrix") {
        summary.warnings.push(w);
    }
    let post_gap = post.map(|p| report.null_gaps[p]);
    summary.gap_report = Some(report);

    let mut csv = String::from("trial,alpha,alarmed,alarm_time,delay\n");
    for (alpha_index, &alpha) in config.alpha_grid.iter().enumerate() {
        let change = config.change_at;
        let results = (0..config.trials)
            .into_par_iter()
            .map(|trial| {
                let mut rng = derive_trial_rng(config.seed, trial, alpha_index as u64);
                let pre_sampler = PmfSampler::new(&pre_row);
                let post_sampler = post_row.as_ref().map(PmfSampler::new);
                let mut t = 0u64;
                let labels = std::iter::from_fn(move || {
                    t += 1;
                    let in_post = change.is_some_and(|c| t >= c);
                    Some(match (&post_sampler, in_post) {
                        (Some(s), true) => s.draw(&mut rng),
                        _ => pre_sampler.draw(&mut rng),
                    })
                });
                run_detector(num_labels, labels, alpha, config.max_steps, config.prune_cap)
            })
            .collect::<Result<Vec<_>>>()?;

        let mut cell = AlphaSummary::new(alpha, config.trials);
        let mut alarm_times = Vec::new();
        let mut delays = Vec::new();
        for (trial, r) in results.iter().enumerate() {
            let delay = match (r.alarm_time, change) {
                (Some(at), Some(c)) => Some(at.saturating_sub(c)),
                _ => None,
            };
            let mut line = format!("{trial},{alpha},{}", r.alarmed);
            push_optional(&mut line, r.alarm_time);
            push_optional(&mut line, delay);
            csv.push_str(&line);
            csv.push('\n');
            if let Some(at) = r.alarm_time {
                alarm_times.push(at as f64);
            }
            if let Some(d) = delay {
                delays.push(d as f64);
            }
        }
        cell.alarmed = Some(alarm_times.len() as u64);
        cell.mean_alarm_time = mean(&alarm_times);
        cell.mean_delay = mean(&delays);
        cell.se_delay = standard_error(&delays);
        summary.per_alpha.push(cell);
    }

    if let Some(delta) = post_gap {
        let means: Vec<Option<f64>> =
            summary.per_alpha.iter().map(|c| c.mean_delay).collect();
        attach_fit(&mut summary, &config.alpha_grid, &means, delta, "alarms");
    }
    Ok(ModeOutput {
        csv: Some(csv),
        summary,
    })
}

/// One mixture trial plus matched single-channel runs. Channel `c`'s labels
/// come from `derive_tagged_rng(seed, trial, alpha_index, c + 1)`, so the
/// single run on channel `c` replays exactly the stream the mixture saw.
struct MixtureTrial {
    stopped: bool,
    tau: u64,
    j_hat: usize,
    log_wealth: f64,
    singles: Vec<crate::sequential::TestResult>,
}

#[allow(clippy::too_many_arguments)]
fn run_mixture_trial(
    matrices: &[ConfusionMatrix],
    weights: &[f64],
    theta: usize,
    alpha: f64,
    max_steps: u64,
    evaluator: WealthEvaluator,
    seed: u64,
    trial: u64,
    alpha_index: u64,
) -> Result<MixtureTrial> {
    let num_labels = matrices[0].num_labels();
    let mut rngs: Vec<ChaCha8Rng> = (0..matrices.len())
        .map(|c| derive_tagged_rng(seed, trial, alpha_index, c as u64 + 1))
        .collect();
    let samplers: Vec<PmfSampler> = matrices
        .iter()
        .map(|m| PmfSampler::new(m.row(theta)))
        .collect();
    let mut states: Vec<EProcessState> = (0..matrices.len())
        .map(|_| EProcessState::for_evaluator(num_labels, evaluator))
        .collect::<Result<_>>()?;

    let log_threshold = -alpha.ln();
    let mut stopped = false;
    let mut tau = 0;
    let mut j_hat = 0;
    let mut log_wealth = 0.0;
    for n in 1..=max_steps {
        // The backed label per channel is fixed before the step consumes it.
        let leaders: Vec<usize> = states.iter().map(|s| s.leading_label()).collect();
        for ((state, sampler), rng) in states.iter_mut().zip(&samplers).zip(&mut rngs) {
            state.step(sampler.draw(rng))?;
        }
        let refs: Vec<&EProcessState> = states.iter().collect();
        log_wealth = mixture_log_wealth(&refs, weights)?;
        tau = n;
        // Report the backed label of the channel contributing most wealth.
        let best = (0..states.len())
            .max_by(|&i, &j| {
                let wi = weights[i].ln() + states[i].log_wealth();
                let wj = weights[j].ln() + states[j].log_wealth();
                wi.partial_cmp(&wj).expect("wealths are never NaN")
            })
            .expect("at least one channel");
        j_hat = leaders[best];
        if log_wealth >= log_threshold {
            stopped = true;
            break;
        }
    }

    let test_config = TestConfig {
        alpha,
        max_steps,
        evaluator,
        record_trajectory: false,
    };
    let singles = (0..matrices.len())
        .map(|c| {
            let rng = derive_tagged_rng(seed, trial, alpha_index, c as u64 + 1);
            let stream = crate::sim::multinomial_stream(matrices[c].row(theta), rng);
            run_test(num_labels, stream, &test_config)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(MixtureTrial {
        stopped,
        tau,
        j_hat,
        log_wealth,
        singles,
    })
}

fn run_mixture_mode(config: &ExperimentConfig) -> Result<ModeOutput> {
    let matrices: Vec<ConfusionMatrix> = config
        .channels
        .iter()
        .enumerate()
        .map(|(c, spec)| spec.confusion(config.seed, c as u64))
        .collect::<Result<_>>()?;
    let num_labels = matrices[0].num_labels();
    if matrices.iter().any(|m| m.num_labels() != num_labels) {
        return Err(Error::InvalidConfig(
            "mixture channels must share the label count".into(),
        ));
    }
    for m in &matrices {
        check_label(m, config.theta, "theta")?;
    }
    let weights = config.weights.clone().expect("validated");
    // The mixture evaluator re-checks weights at every step; fail fast here.
    if weights.iter().any(|&w| !w.is_finite() || w < 0.0) {
        return Err(Error::InvalidConfig(
            "mixture weights must be finite and nonnegative".into(),
        ));
    }
    let weight_sum: f64 = weights.iter().sum();
    if (weight_sum - 1.0).abs() > crate::eprocess::WEIGHT_SUM_TOLERANCE {
        return Err(Error::InvalidConfig(format!(
            "mixture weights sum to {weight_sum}, expected 1"
        )));
    }

    let mut summary = Summary::new(Mode::Mixture);
    summary.alpha_grid = Some(config.alpha_grid.clone());
    summary.theta = Some(config.theta);
    let reports: Vec<GapReport> = matrices.iter().map(gaps).collect();
    for (c, m) in matrices.iter().enumerate() {
        if let Some(w) = separability_warning(m, &format!("channel {c}")) {
            summary.warnings.push(w);
        }
    }
    let delta = reports[0].null_gaps[config.theta];
    summary.channel_gaps = Some(reports);

    let mut csv = String::from("trial,alpha,stream,stopped,tau,j_hat,log_wealth\n");
    for (alpha_index, &alpha) in config.alpha_grid.iter().enumerate() {
        let results = (0..config.trials)
            .into_par_iter()
            .map(|trial| {
                run_mixture_trial(
                    &matrices,
                    &weights,
                    config.theta,
                    alpha,
                    config.max_steps,
                    config.evaluator,
                    config.seed,
                    trial,
                    alpha_index as u64,
                )
            })
            .collect::<Result<Vec<_>>>()?;

        let mut cell = AlphaSummary::new(alpha, config.trials);
        let mut mix_taus = Vec::new();
        let mut single_taus: Vec<Vec<f64>> = vec![Vec::new(); matrices.len()];
        let mut ratios = vec![0.0; num_labels];
        for (trial, r) in results.iter().enumerate() {
            let mut line = format!("{trial},{alpha},mixture,{}", r.stopped);
            push_optional(&mut line, r.stopped.then_some(r.tau));
            let _ = write!(line, ",{},{}", r.j_hat, r.log_wealth);
            csv.push_str(&line);
            csv.push('\n');
            if r.stopped {
                mix_taus.push(r.tau as f64);
            }
            ratios[r.j_hat] += 1.0 / config.trials as f64;
            for (c, s) in r.singles.iter().enumerate() {
                let mut line = format!("{trial},{alpha},channel_{c},{}", s.stopped);
                push_optional(&mut line, s.stopped.then_some(s.tau));
                let _ = write!(line, ",{},{}", s.leader_at_stop, s.final_log_wealth);
                csv.push_str(&line);
                csv.push('\n');
                if s.stopped {
                    single_taus[c].push(s.tau as f64);
                }
            }
        }
        cell.stopped = Some(mix_taus.len() as u64);
        cell.stop_fraction = Some(mix_taus.len() as f64 / config.trials as f64);
        cell.mean_tau = mean(&mix_taus);
        cell.se_tau = standard_error(&mix_taus);
        cell.identification_ratios = Some(ratios);
        cell.channel_mean_tau = Some(single_taus.iter().map(|t| mean(t)).collect());
        summary.per_alpha.push(cell);
    }

    let means: Vec<Option<f64>> = summary.per_alpha.iter().map(|c| c.mean_tau).collect();
    attach_fit(&mut summary, &config.alpha_grid, &means, delta, "stopped trials");
    Ok(ModeOutput {
        csv: Some(csv),
        summary,
    })
}

fn run_erm_mode(config: &ExperimentConfig) -> Result<ModeOutput> {
    let spec = config.source.as_ref().expect("validated").gaussian()?;
    if spec.num_labels() != 2 || spec.dim() != 1 {
        return Err(Error::InvalidConfig(
            "erm mode needs exactly 2 one-dimensional gaussian classes".into(),
        ));
    }
    let (mean0, mean1) = (spec.means()[0][0], spec.means()[1][0]);
    if !(mean0 < mean1) {
        // Threshold rules assign label 0 below the cut, so the class-0 mean
        // must sit to the left for any threshold to separate truly.
        return Err(Error::InvalidConfig(format!(
            "erm mode needs class-0 mean < class-1 mean (got {mean0} vs {mean1})"
        )));
    }
    let settings = config.erm.clone().unwrap_or_default();
    if settings.thresholds.is_empty() || settings.repeats == 0 || settings.train_per_class == 0 {
        return Err(Error::InvalidConfig(
            "erm settings need thresholds, repeats, and train_per_class >= 1".into(),
        ));
    }
    let family: Vec<ThresholdClassifier> = settings
        .thresholds
        .iter()
        .map(|&t| ThresholdClassifier::new(t))
        .collect();

    let outcomes = (0..settings.repeats)
        .into_par_iter()
        .map(|repeat| {
            let mut rng = derive_trial_rng(config.seed, repeat, 0);
            let data = OfflineDataset::sample_from(&spec, settings.train_per_class, &mut rng)?;
            let (index, gap) = erm_max_gap(&family, &data)?;
            Ok((index, gap))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut csv = String::from("repeat,chosen_index,threshold,empirical_gap,separable_true\n");
    let mut separable = 0u64;
    let mut gap_sum = 0.0;
    let mut threshold_sum = 0.0;
    for (repeat, &(index, gap)) in outcomes.iter().enumerate() {
        let threshold = settings.thresholds[index];
        // A threshold rule separates the true Gaussians exactly when the cut
        // lies strictly between the class means.
        let separable_true = threshold > mean0 && threshold < mean1;
        let _ = writeln!(
            csv,
            "{repeat},{index},{threshold},{gap},{separable_true}"
        );
        separable += u64::from(separable_true);
        gap_sum += gap;
        threshold_sum += threshold;
    }

    let mut summary = Summary::new(Mode::Erm);
    summary.erm = Some(ErmSummary {
        repeats: settings.repeats,
        separable_fraction: separable as f64 / settings.repeats as f64,
        mean_empirical_gap: gap_sum / settings.repeats as f64,
        mean_threshold: threshold_sum / settings.repeats as f64,
    });
    Ok(ModeOutput {
        csv: Some(csv),
        summary,
    })
}

fn run_bounds_mode(config: &ExperimentConfig) -> Result<ModeOutput> {
    let request = config.bounds.as_ref().expect("validated");
    let mut summary = Summary::new(Mode::Bounds);
    summary.bounds = Some(evaluate_bounds(request)?);
    Ok(ModeOutput {
        csv: None,
        summary,
    })
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

/// Runs the experiment and writes `results.csv`, `summary.json`, and
/// `meta.json` into `out_dir` (created if missing).
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<RunArtifacts> {
    config.validate()?;
    let output = match config.mode {
        Mode::Test => run_test_mode(config)?,
        Mode::Detect => run_detect_mode(config)?,
        Mode::Mixture => run_mixture_mode(config)?,
        Mode::Erm => run_erm_mode(config)?,
        Mode::Bounds => run_bounds_mode(config)?,
    };

    fs::create_dir_all(out_dir)?;
    let results_path = match &output.csv {
        Some(csv) => {
            let path = out_dir.join("results.csv");
            fs::write(&path, csv)?;
            Some(path)
        }
        None => None,
    };
    let summary_path = out_dir.join("summary.json");
    let mut summary_text = serde_json::to_string_pretty(&output.summary)?;
    summary_text.push('\n');
    fs::write(&summary_path, summary_text)?;

    let meta = Meta {
        package: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        generator_id: GENERATOR_ID.to_string(),
        seed: config.seed,
        created_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        config: config.clone(),
    };
    let meta_path = out_dir.join("meta.json");
    let mut meta_text = serde_json::to_string_pretty(&meta)?;
    meta_text.push('\n');
    fs::write(&meta_path, meta_text)?;

    Ok(RunArtifacts {
        out_dir: out_dir.to_path_buf(),
        results_path,
        summary_path,
        meta_path,
        summary: output.summary,
    })
}

// ---------------------------------------------------------------------------
