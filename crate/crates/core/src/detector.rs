//! Change-point detection as a running maximum of restarted wealth processes.
//!
//! For every step `k` the detector maintains a betting engine that sees only
//! the window of labels from `k` onward (restart semantics: the window's
//! front-runner is computed from the window's own counts). The detection
//! statistic is the maximum wealth over all active windows,
//!
//! ```text
//!   M_n = max_{1 <= k <= n} W_n^(k),
//! ```
//!
//! alarmed the first time it reaches `1/alpha`. Each `W^(k)` is a
//! supermartingale on no-change data, which yields an average run length of
//! at least `1/alpha` under the null; after a change at `T`, the window
//! starting exactly at the change behaves like a fresh sequential test on
//! post-change data, so the detection delay is bounded by that test's
//! stopping time.
//!
//! Cost: one window per step, two counters per label per window, so a step
//! costs `O(n)` without pruning. The optional prune cap keeps only the
//! highest-wealth windows plus the newest one; dropping windows can only
//! lower the maximum, so a pruned detector alarms no earlier than the full
//! one and remains anytime-valid.

use serde::{Deserialize, Serialize};

use crate::eprocess::{leading_label, log_wealth_exact, BetCounts};
use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Per-window state
// ---------------------------------------------------------------------------

/// One restarted betting engine, scoped to the labels from `start_step` on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorStart {
    /// First step this window observes (1-based).
    pub start_step: u64,
    label_counts: Vec<u64>,
    bet: BetCounts,
    log_wealth: f64,
}

impl DetectorStart {
    fn new(start_step: u64, num_labels: usize) -> Self {
        Self {
            start_step,
            label_counts: vec![0; num_labels],
            bet: BetCounts::default(),
            log_wealth: 0.0,
        }
    }

    /// Window-local label tallies.
    pub fn label_counts(&self) -> &[u64] {
        &self.label_counts
    }

    pub fn bet(&self) -> BetCounts {
        self.bet
    }

    /// Log wealth of this window's engine (exact evaluator).
    pub fn log_wealth(&self) -> f64 {
        self.log_wealth
    }

    fn observe(&mut self, label: usize) {
        let leader = leading_label(&self.label_counts);
        if leader != 0 {
            let mut changed = false;
            if label == 0 {
                self.bet.null_hits += 1;
                changed = true;
            } else if label == leader {
                self.bet.leader_hits += 1;
                changed = true;
            }
            if changed {
                self.log_wealth = log_wealth_exact(self.bet);
            }
        }
        self.label_counts[label] += 1;
    }
}

// ---------------------------------------------------------------------------
// Detector
// ---------------------------------------------------------------------------

/// The running-maximum detector state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detector {
    num_labels: usize,
    n: u64,
    starts: Vec<DetectorStart>,
    prune_cap: Option<usize>,
    log_max: f64,
}

impl Detector {
    /// Full detector: one window per processed step, never pruned.
    pub fn new(num_labels: usize) -> Result<Self> {
        if num_labels < 2 {
            return Err(Error::InvalidConfig(format!(
                "need at least 2 labels, got {num_labels}"
            )));
        }
        Ok(Self {
            num_labels,
            n: 0,
            starts: Vec::new(),
            prune_cap: None,
            log_max: 0.0,
        })
    }

    /// Detector that, after each step, keeps only the `cap` highest-wealth
    /// windows plus the newest window.
    pub fn with_prune_cap(num_labels: usize, cap: usize) -> Result<Self> {
        if cap == 0 {
            return Err(Error::InvalidConfig("prune cap must be >= 1".into()));
        }
        let mut detector = Self::new(num_labels)?;
        detector.prune_cap = Some(cap);
        Ok(detector)
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    /// Active windows, oldest first.
    pub fn starts(&self) -> &[DetectorStart] {
        &self.starts
    }

    /// Log of the current detection statistic `M_n` (0 before any step).
    pub fn log_max(&self) -> f64 {
        self.log_max
    }

    /// Processes one label: spawns the window for this step, feeds the label
    /// to every active window, prunes if configured, and returns the updated
    /// detection statistic `M_n` (which may saturate to `+inf` for extreme
    /// windows; compare via [`Detector::log_max`] when headroom matters).
    pub fn step(&mut self, label: usize) -> Result<f64> {
        if label >= self.num_labels {
            return Err(Error::InvalidState(format!(
                "label {label} out of range 0..{}",
                self.num_labels
            )));
        }
        self.n += 1;
        self.starts.push(DetectorStart::new(self.n, self.num_labels));
        let mut log_max = f64::NEG_INFINITY;
        for start in &mut self.starts {
            start.observe(label);
            log_max = log_max.max(start.log_wealth);
        }
        self.log_max = log_max;
        if let Some(cap) = self.prune_cap {
            self.prune(cap);
        }
        Ok(self.log_max.exp())
    }

    /// Keeps the `cap` highest-wealth windows plus the newest one. Ties are
    /// broken toward older windows so pruning is fully deterministic. The
    /// retained set always contains the argmax, so `log_max` is unaffected
    /// at the step where pruning happens.
    fn prune(&mut self, cap: usize) {
        if self.starts.len() <= cap {
            return;
        }
        let mut order: Vec<usize> = (0..self.starts.len()).collect();
        order.sort_by(|&i, &j| {
            self.starts[j]
                .log_wealth
                .partial_cmp(&self.starts[i].log_wealth)
                .expect("window wealths are never NaN")
                .then(self.starts[i].start_step.cmp(&self.starts[j].start_step))
        });
        let mut keep = vec![false; self.starts.len()];
        for &i in order.iter().take(cap) {
            keep[i] = true;
        }
        *keep.last_mut().expect("at least one window") = true; // newest window survives
        let mut idx = 0;
        self.starts.retain(|_| {
            let kept = keep[idx];
            idx += 1;
            kept
        });
    }
}

// ---------------------------------------------------------------------------
// Detection runs
// ---------------------------------------------------------------------------

/// Outcome of one detection run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    /// Whether `M_n` reached `1/alpha` within the horizon.
    pub alarmed: bool,
    /// The alarm step (1-based) when `alarmed`.
    pub alarm_time: Option<u64>,
    /// Labels consumed.
    pub steps: u64,
    /// Log of the detection statistic at the final step.
    pub final_log_max: f64,
}

/// Drives a detector over a label stream until the first `1/alpha` crossing
/// of `M_n`, the horizon, or stream exhaustion. Labels past the alarm are
/// never consumed.
pub fn run_detector(
    num_labels: usize,
    labels: impl IntoIterator<Item = usize>,
    alpha: f64,
    max_steps: u64,
    prune_cap: Option<usize>,
) -> Result<DetectionResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "alpha = {alpha} must lie strictly inside (0, 1)"
        )));
    }
    if max_steps == 0 {
        return Err(Error::InvalidConfig("max_steps must be >= 1".into()));
    }
    let mut detector = match prune_cap {
        Some(cap) => Detector::with_prune_cap(num_labels, cap)?,
        None => Detector::new(num_labels)?,
    };
    let log_threshold = -alpha.ln();
    for label in labels {
        if detector.n() >= max_steps {
            break;
        }
        detector.step(label)?;
        if detector.log_max() >= log_threshold {
            return Ok(DetectionResult {
                alarmed: true,
                alarm_time: Some(detector.n()),
                steps: detector.n(),
                final_log_max: detector.log_max(),
            });
        }
    }
    Ok(DetectionResult {
        alarmed: false,
        alarm_time: None,
        steps: detector.n(),
        final_log_max: detector.log_max(),
    })
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_is_neutral() {
        let mut d = Detector::new(2).unwrap();
        let m = d.step(0).unwrap();
        assert_eq!(m, 1.0);
        assert_eq!(d.starts().len(), 1);
    }

    #[test]
    fn all_ones_reproduces_sequential_hand_trace() {
        // The window starting at step 1 dominates: wealth 1, 3/2, 7/3.
        let mut d = Detector::new(2).unwrap();
        d.step(1).unwrap();
        assert_eq!(d.log_max(), 0.0);
        let m2 = d.step(1).unwrap();
        assert!((m2 - 1.5).abs() < 1e-12);
        let m3 = d.step(1).unwrap();
        assert!((m3 - 7.0 / 3.0).abs() < 1e-12);
        assert_eq!(d.starts().len(), 3);
    }

    #[test]
    fn null_stream_keeps_statistic_at_one() {
        let mut d = Detector::new(2).unwrap();
        for _ in 0..100 {
            let m = d.step(0).unwrap();
            assert!(m <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn immediate_change_with_perfect_classifier_alarms_at_three() {
        // Change at T = 1 and post-change labels always 1: the detector
        // reduces to the sequential hand trace and alarms at step 3 for
        // alpha = 1/2.
        let result =
            run_detector(2, std::iter::repeat(1), 0.5, 100, None).unwrap();
        assert!(result.alarmed);
        assert_eq!(result.alarm_time, Some(3));
    }

    #[test]
    fn never_consumes_past_the_alarm() {
        let labels = vec![1, 1, 1, 99];
        let result = run_detector(2, labels.into_iter(), 0.5, 100, None).unwrap();
        assert!(result.alarmed);
        assert_eq!(result.alarm_time, Some(3));
    }

    #[test]
    fn pruned_statistic_never_exceeds_full() {
        // Mildly adversarial stream mixing bursts of 1s into 0s.
        let labels: Vec<usize> = (0..200).map(|t| usize::from(t % 7 < 2)).collect();
        let mut full = Detector::new(2).unwrap();
        let mut pruned = Detector::with_prune_cap(2, 8).unwrap();
        for &l in &labels {
            full.step(l).unwrap();
            pruned.step(l).unwrap();
            assert!(pruned.log_max() <= full.log_max() + 1e-12);
            assert!(pruned.starts().len() <= 9); // cap + newest
        }
        assert_eq!(full.starts().len(), 200);
    }

    #[test]
    fn prune_keeps_the_argmax_window() {
        let labels: Vec<usize> = std::iter::repeat(1).take(50).collect();
        let mut full = Detector::new(2).unwrap();
        let mut pruned = Detector::with_prune_cap(2, 4).unwrap();
        for &l in &labels {
            full.step(l).unwrap();
            pruned.step(l).unwrap();
            // On this stream the oldest window dominates and must survive.
            assert_eq!(pruned.log_max(), full.log_max());
        }
    }

    #[test]
    fn run_detector_validates_inputs() {
        assert!(run_detector(2, [0].into_iter(), 0.0, 10, None).is_err());
        assert!(run_detector(2, [0].into_iter(), 0.5, 0, None).is_err());
        assert!(run_detector(2, [7].into_iter(), 0.5, 10, None).is_err());
        assert!(Detector::with_prune_cap(2, 0).is_err());
    }

    #[test]
    fn stream_exhaustion_reports_no_alarm() {
        let result = run_detector(2, [0, 0, 0].into_iter(), 0.01, 100, None).unwrap();
        assert!(!result.alarmed);
        assert_eq!(result.steps, 3);
        assert_eq!(result.alarm_time, None);
    }
}
