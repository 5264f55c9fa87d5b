//! Synthetic data sources and stand-in classifiers.
//!
//! The sequential engine consumes a classifier only through its induced
//! label distribution, so any classifier with a known or estimable confusion
//! matrix can drive it. This module provides the two source kinds used by
//! the harness:
//!
//! * **Multinomial streams** — draw labels directly from a confusion-matrix
//!   row. This is how published matrices are replayed without re-running the
//!   original model.
//! * **Gaussian tuples** — diagonal-covariance class-conditional Gaussians
//!   plus simple geometric classifiers (nearest-centroid, 1-D threshold),
//!   exercising the full train → estimate-confusion → test pipeline.
//!
//! It also houses the empirical-gap maximizer over a finite classifier
//! family: pick the classifier whose offline-data confusion matrix has the
//! largest minimum diagonal-vs-off-diagonal gap.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{gaps, ConfusionMatrix, LabelPmf};

// ---------------------------------------------------------------------------
// Gaussian class-conditional sources
// ---------------------------------------------------------------------------

/// Class-conditional diagonal Gaussians: one mean vector per label, one
/// shared variance vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GaussianTupleRepr", into = "GaussianTupleRepr")]
pub struct GaussianTupleSpec {
    means: Vec<Vec<f64>>,
    variances: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct GaussianTupleRepr {
    means: Vec<Vec<f64>>,
    variances: Vec<f64>,
}

impl TryFrom<GaussianTupleRepr> for GaussianTupleSpec {
    type Error = Error;
    fn try_from(repr: GaussianTupleRepr) -> Result<Self> {
        Self::new(repr.means, repr.variances)
    }
}

impl From<GaussianTupleSpec> for GaussianTupleRepr {
    fn from(spec: GaussianTupleSpec) -> Self {
        Self {
            means: spec.means,
            variances: spec.variances,
        }
    }
}

impl GaussianTupleSpec {
    pub fn new(means: Vec<Vec<f64>>, variances: Vec<f64>) -> Result<Self> {
        if means.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "need at least 2 class means, got {}",
                means.len()
            )));
        }
        let dim = variances.len();
        if dim == 0 {
            return Err(Error::InvalidConfig("variance vector is empty".into()));
        }
        if let Some(bad) = means.iter().position(|m| m.len() != dim) {
            return Err(Error::InvalidConfig(format!(
                "mean {bad} has dimension {}, expected {dim}",
                means[bad].len()
            )));
        }
        if let Some((i, &v)) = variances
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v > 0.0))
        {
            return Err(Error::InvalidConfig(format!(
                "variance[{i}] = {v} must be finite and > 0"
            )));
        }
        if means.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::InvalidConfig("means must be finite".into()));
        }
        Ok(Self { means, variances })
    }

    /// Number of class labels (L + 1).
    pub fn num_labels(&self) -> usize {
        self.means.len()
    }

    /// Feature dimension d.
    pub fn dim(&self) -> usize {
        self.variances.len()
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    /// One draw from the class-`theta` Gaussian.
    pub fn sample(&self, theta: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
        if theta >= self.num_labels() {
            return Err(Error::InvalidConfig(format!(
                "class {theta} out of range 0..{}",
                self.num_labels()
            )));
        }
        let mean = &self.means[theta];
        Ok(self
            .variances
            .iter()
            .zip(mean)
            .map(|(&var, &mu)| {
                let z: f64 = StandardNormal.sample(rng);
                mu + var.sqrt() * z
            })
            .collect())
    }
}

// ---------------------------------------------------------------------------
// Classifiers
// ---------------------------------------------------------------------------

/// Anything that maps a feature vector to a label in `0..num_labels`.
pub trait Classifier {
    fn num_labels(&self) -> usize;
    fn classify(&self, x: &[f64]) -> usize;
}

impl<C: Classifier + ?Sized> Classifier for &C {
    fn num_labels(&self) -> usize {
        (**self).num_labels()
    }
    fn classify(&self, x: &[f64]) -> usize {
        (**self).classify(x)
    }
}

impl<C: Classifier + ?Sized> Classifier for Box<C> {
    fn num_labels(&self) -> usize {
        (**self).num_labels()
    }
    fn classify(&self, x: &[f64]) -> usize {
        (**self).classify(x)
    }
}

/// Nearest-centroid classifier; ties go to the smallest label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentroidClassifier {
    centroids: Vec<Vec<f64>>,
}

impl CentroidClassifier {
    pub fn new(centroids: Vec<Vec<f64>>) -> Result<Self> {
        if centroids.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "need at least 2 centroids, got {}",
                centroids.len()
            )));
        }
        let dim = centroids[0].len();
        if dim == 0 || centroids.iter().any(|c| c.len() != dim) {
            return Err(Error::InvalidConfig(
                "centroids must share a positive dimension".into(),
            ));
        }
        Ok(Self { centroids })
    }

    pub fn centroids(&self) -> &[Vec<f64>] {
        &self.centroids
    }
}

impl Classifier for CentroidClassifier {
    fn num_labels(&self) -> usize {
        self.centroids.len()
    }

    fn classify(&self, x: &[f64]) -> usize {
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for (label, centroid) in self.centroids.iter().enumerate() {
            let dist: f64 = centroid
                .iter()
                .zip(x)
                .map(|(&c, &xi)| (xi - c) * (xi - c))
                .sum();
            if dist < best_dist {
                best_dist = dist;
                best = label;
            }
        }
        best
    }
}

/// Binary 1-D threshold rule: label 0 iff the first coordinate is at most
/// the threshold. These form the finite families fed to the gap maximizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdClassifier {
    pub threshold: f64,
}

impl ThresholdClassifier {
    pub fn new(threshold: f64) -> Self {
        Self { threshold }
    }
}

impl Classifier for ThresholdClassifier {
    fn num_labels(&self) -> usize {
        2
    }

    fn classify(&self, x: &[f64]) -> usize {
        usize::from(x[0] > self.threshold)
    }
}

// ---------------------------------------------------------------------------
// Offline datasets and training
// ---------------------------------------------------------------------------

/// Labeled offline samples with the same count per class.
#[derive(Debug, Clone, PartialEq)]
pub struct OfflineDataset {
    classes: Vec<Vec<Vec<f64>>>,
}

impl OfflineDataset {
    /// `classes[theta]` holds the samples of class `theta`; every class must
    /// be nonempty with the same sample count and feature dimension.
    pub fn new(classes: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if classes.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "need at least 2 classes, got {}",
                classes.len()
            )));
        }
        let n = classes[0].len();
        if n == 0 {
            return Err(Error::InvalidConfig("class 0 has no samples".into()));
        }
        if let Some(bad) = classes.iter().position(|c| c.len() != n) {
            return Err(Error::InvalidConfig(format!(
                "class {bad} has {} samples, expected {n} (equal counts required)",
                classes[bad].len()
            )));
        }
        let dim = classes[0][0].len();
        if dim == 0
            || classes
                .iter()
                .any(|c| c.iter().any(|x| x.len() != dim))
        {
            return Err(Error::InvalidConfig(
                "samples must share a positive dimension".into(),
            ));
        }
        Ok(Self { classes })
    }

    /// Draws `n_per_class` fresh samples from every class of `spec`.
    pub fn sample_from(
        spec: &GaussianTupleSpec,
        n_per_class: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if n_per_class == 0 {
            return Err(Error::InvalidConfig("n_per_class must be >= 1".into()));
        }
        let mut classes = Vec::with_capacity(spec.num_labels());
        for theta in 0..spec.num_labels() {
            let mut samples = Vec::with_capacity(n_per_class);
            for _ in 0..n_per_class {
                samples.push(spec.sample(theta, rng)?);
            }
            classes.push(samples);
        }
        Self::new(classes)
    }

    pub fn num_labels(&self) -> usize {
        self.classes.len()
    }

    pub fn samples_per_class(&self) -> usize {
        self.classes[0].len()
    }

    pub fn dim(&self) -> usize {
        self.classes[0][0].len()
    }

    pub fn class(&self, theta: usize) -> &[Vec<f64>] {
        &self.classes[theta]
    }

    /// CSV with header `label,coord_0,...,coord_{d-1}`, one sample per row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("label");
        for j in 0..self.dim() {
            out.push_str(&format!(",coord_{j}"));
        }
        out.push('\n');
        for (label, samples) in self.classes.iter().enumerate() {
            for x in samples {
                out.push_str(&label.to_string());
                for v in x {
                    out.push_str(&format!(",{v}"));
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut by_label: Vec<Vec<Vec<f64>>> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with("label") {
                continue;
            }
            let mut fields = line.split(',');
            let label: usize = fields
                .next()
                .expect("split yields at least one field")
                .trim()
                .parse()
                .map_err(|e| {
                    Error::InvalidConfig(format!("line {}: bad label: {e}", lineno + 1))
                })?;
            let coords: Vec<f64> = fields
                .map(|f| {
                    f.trim().parse::<f64>().map_err(|e| {
                        Error::InvalidConfig(format!(
                            "line {}: bad coordinate: {e}",
                            lineno + 1
                        ))
                    })
                })
                .collect::<Result<_>>()?;
            if label >= by_label.len() {
                by_label.resize(label + 1, Vec::new());
            }
            by_label[label].push(coords);
        }
        Self::new(by_label)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }
}

/// Fits a nearest-centroid classifier: each centroid is its class's sample
/// mean.
pub fn train_centroid(data: &OfflineDataset) -> Result<CentroidClassifier> {
    let dim = data.dim();
    let n = data.samples_per_class() as f64;
    let centroids = data
        .classes
        .iter()
        .map(|samples| {
            let mut mean = vec![0.0; dim];
            for x in samples {
                for (m, &v) in mean.iter_mut().zip(x) {
                    *m += v;
                }
            }
            for m in &mut mean {
                *m /= n;
            }
            mean
        })
        .collect();
    CentroidClassifier::new(centroids)
}

// ---------------------------------------------------------------------------
// Confusion-matrix estimation
// ---------------------------------------------------------------------------

/// Estimates the classifier's confusion matrix on `spec`: row `theta` is the
/// empirical label distribution over `n_eval` fresh draws from class `theta`.
pub fn estimate_confusion(
    classifier: &impl Classifier,
    spec: &GaussianTupleSpec,
    n_eval: usize,
    rng: &mut impl Rng,
) -> Result<ConfusionMatrix> {
    if n_eval == 0 {
        return Err(Error::InvalidConfig("n_eval must be >= 1".into()));
    }
    let num_labels = classifier.num_labels();
    if spec.num_labels() != num_labels {
        return Err(Error::InvalidConfig(format!(
            "classifier has {num_labels} labels but source has {}",
            spec.num_labels()
        )));
    }
    let mut rows = Vec::with_capacity(num_labels);
    for theta in 0..num_labels {
        let mut counts = vec![0u64; num_labels];
        for _ in 0..n_eval {
            let x = spec.sample(theta, rng)?;
            counts[classifier.classify(&x)] += 1;
        }
        rows.push(
            counts
                .iter()
                .map(|&c| c as f64 / n_eval as f64)
                .collect::<Vec<_>>(),
        );
    }
    ConfusionMatrix::new(rows)
}

/// Empirical confusion matrix of a classifier on an offline dataset (row
/// `theta` = label frequencies over the stored class-`theta` samples).
pub fn empirical_confusion(
    classifier: &impl Classifier,
    data: &OfflineDataset,
) -> Result<ConfusionMatrix> {
    let num_labels = classifier.num_labels();
    if data.num_labels() != num_labels {
        return Err(Error::InvalidConfig(format!(
            "classifier has {num_labels} labels but dataset has {}",
            data.num_labels()
        )));
    }
    let n = data.samples_per_class() as f64;
    let mut rows = Vec::with_capacity(num_labels);
    for theta in 0..num_labels {
        let mut counts = vec![0u64; num_labels];
        for x in data.class(theta) {
            counts[classifier.classify(x)] += 1;
        }
        rows.push(counts.iter().map(|&c| c as f64 / n).collect::<Vec<_>>());
    }
    ConfusionMatrix::new(rows)
}

// ---------------------------------------------------------------------------
// Multinomial label streams
// ---------------------------------------------------------------------------

/// Inverse-CDF sampler over a label pmf. Cumulative probabilities are fixed
/// in declaration order, so a given RNG sequence always yields the same
/// labels regardless of platform.
#[derive(Debug, Clone)]
pub struct PmfSampler {
    cumulative: Vec<f64>,
}

impl PmfSampler {
    pub fn new(pmf: &LabelPmf) -> Self {
        let mut cumulative = Vec::with_capacity(pmf.len());
        let mut acc = 0.0;
        for &p in pmf.probs() {
            acc += p;
            cumulative.push(acc);
        }
        Self { cumulative }
    }

    /// Draws one label: the first index whose cumulative probability exceeds
    /// a uniform draw, falling back to the last label if rounding pushed the
    /// final cumulative sum below the draw.
    pub fn draw(&self, rng: &mut impl Rng) -> usize {
        let u: f64 = rng.random();
        self.cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.cumulative.len() - 1)
    }
}

/// Endless i.i.d. label stream from a pmf.
#[derive(Debug)]
pub struct MultinomialStream<R: Rng> {
    sampler: PmfSampler,
    rng: R,
}

impl<R: Rng> MultinomialStream<R> {
    pub fn new(pmf: &LabelPmf, rng: R) -> Self {
        Self {
            sampler: PmfSampler::new(pmf),
            rng,
        }
    }
}

impl<R: Rng> Iterator for MultinomialStream<R> {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        Some(self.sampler.draw(&mut self.rng))
    }
}

/// Convenience constructor matching the harness call sites.
pub fn multinomial_stream<R: Rng>(pmf: &LabelPmf, rng: R) -> MultinomialStream<R> {
    MultinomialStream::new(pmf, rng)
}

// ---------------------------------------------------------------------------
// Empirical-gap maximization over a finite family
// ---------------------------------------------------------------------------

/// Picks the classifier whose empirical confusion matrix on `data` has the
/// largest minimum gap (diagonal minus worst same-row off-diagonal entry).
/// Returns `(index into family, empirical gap)`; ties keep the earliest
/// family member.
pub fn erm_max_gap<C: Classifier>(
    family: &[C],
    data: &OfflineDataset,
) -> Result<(usize, f64)> {
    if family.is_empty() {
        return Err(Error::InvalidConfig("classifier family is empty".into()));
    }
    let mut best_index = 0;
    let mut best_gap = f64::NEG_INFINITY;
    for (index, classifier) in family.iter().enumerate() {
        let cm = empirical_confusion(classifier, data)?;
        let gap = gaps(&cm).min_pairwise_gap;
        if gap > best_gap {
            best_gap = gap;
            best_index = index;
        }
    }
    Ok((best_index, best_gap))
}

// ---------------------------------------------------------------------------
