//! The level-`alpha`, power-one stopping rule over a label stream.
//!
//! The test advances one betting engine over the stream and stops the first
//! time the wealth reaches `1/alpha`. Ville's inequality makes the false-stop
//! probability at most `alpha` under the null at *every* horizon
//! simultaneously; under a separable alternative the wealth drifts upward and
//! the test stops with probability one, in roughly `ln(1/alpha) / gap^2`
//! steps. The label the bettor was backing at the stopping step doubles as an
//! estimate of which alternative produced the data.
//!
//! Streams are consumed lazily: no label past the stopping step is ever
//! pulled, so callers can hand in live iterators.

use serde::{Deserialize, Serialize};

use crate::eprocess::{BetCounts, EProcessState, WealthEvaluator};
use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Configuration and results
// ---------------------------------------------------------------------------

/// Parameters of one sequential test run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestConfig {
    /// Type-I error budget, strictly inside (0, 1).
    pub alpha: f64,
    /// Hard horizon: the run reports "not stopped" if the wealth never
    /// reaches `1/alpha` within this many steps. The underlying guarantee
    /// has no horizon; the cap exists so null-side simulation terminates,
    /// and truncation can only under-report the false-stop rate.
    pub max_steps: u64,
    /// Wealth evaluation backing the stopping decision.
    #[serde(default)]
    pub evaluator: WealthEvaluator,
    /// Record a per-step trajectory in the result (off by default; the
    /// trajectory is O(steps) memory).
    #[serde(default)]
    pub record_trajectory: bool,
}

impl TestConfig {
    pub fn new(alpha: f64, max_steps: u64) -> Result<Self> {
        let config = Self {
            alpha,
            max_steps,
            evaluator: WealthEvaluator::Exact,
            record_trajectory: false,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha = {} must lie strictly inside (0, 1)",
                self.alpha
            )));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidConfig("max_steps must be >= 1".into()));
        }
        if let WealthEvaluator::Grid { points } = self.evaluator {
            if points == 0 {
                return Err(Error::InvalidConfig("grid evaluator needs >= 1 point".into()));
            }
        }
        Ok(())
    }
}

/// One per-step record of a recorded trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub step: u64,
    pub label: usize,
    /// The label backed at this step (0 = sat out).
    pub leader: usize,
    pub null_hits: u64,
    pub leader_hits: u64,
    pub log_wealth: f64,
}

/// Outcome of one sequential test run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    /// Whether the wealth reached `1/alpha` within the horizon.
    pub stopped: bool,
    /// The stopping step when `stopped`; otherwise the number of labels
    /// actually consumed (the horizon, unless the stream ran dry first).
    pub tau: u64,
    /// The label backed at the final processed step — the bet that was live
    /// when the test stopped, which is the test's identification output.
    pub leader_at_stop: usize,
    /// Log wealth (under the configured evaluator) at the final step.
    pub final_log_wealth: f64,
    /// Per-step records when requested in the config.
    pub trajectory: Option<Vec<TrajectoryPoint>>,
    /// Final bet counts, for diagnostics.
    pub bet: BetCounts,
}

// ---------------------------------------------------------------------------
// Runners
// ---------------------------------------------------------------------------

/// Runs the stopping rule over a label stream.
///
/// Stops at the first step `n >= 1` with wealth `>= 1/alpha` (compared in log
/// space) and never consumes a label past that step. If the stream ends
/// before the horizon the run reports `stopped = false` with `tau` equal to
/// the number of labels consumed.
pub fn run_test(
    num_labels: usize,
    labels: impl IntoIterator<Item = usize>,
    config: &TestConfig,
) -> Result<TestResult> {
    config.validate()?;
    let mut state = EProcessState::for_evaluator(num_labels, config.evaluator)?;
    let log_threshold = -config.alpha.ln();
    let mut trajectory = config.record_trajectory.then(Vec::new);
    let mut leader_at_step = 0usize;
    let mut log_wealth = 0.0;
    let mut stopped = false;

    for label in labels {
        if state.n() >= config.max_steps {
            break;
        }
        leader_at_step = state.leading_label();
        state.step(label)?;
        log_wealth = state.evaluate(config.evaluator)?;
        if let Some(points) = trajectory.as_mut() {
            points.push(TrajectoryPoint {
                step: state.n(),
                label,
                leader: leader_at_step,
                null_hits: state.bet().null_hits,
                leader_hits: state.bet().leader_hits,
                log_wealth,
            });
        }
        if log_wealth >= log_threshold {
            stopped = true;
            break;
        }
    }

    Ok(TestResult {
        stopped,
        tau: state.n(),
        leader_at_stop: leader_at_step,
        final_log_wealth: log_wealth,
        trajectory,
        bet: state.bet(),
    })
}

/// The backed label at each step `t = 1..=horizon`, independent of any
/// stopping decision. Entry `t - 1` is the front-runner computed from the
/// labels strictly before `t` (so entry 0 is always 0).
pub fn identification_trace(
    num_labels: usize,
    labels: impl IntoIterator<Item = usize>,
    horizon: u64,
) -> Result<Vec<usize>> {
    if horizon == 0 {
        return Err(Error::InvalidConfig("horizon must be >= 1".into()));
    }
    let mut state = EProcessState::new(num_labels)?;
    let mut trace = Vec::with_capacity(horizon as usize);
    for label in labels {
        trace.push(state.leading_label());
        state.step(label)?;
        if state.n() >= horizon {
            return Ok(trace);
        }
    }
    Err(Error::InvalidState(format!(
        "label stream ended after {} steps, horizon was {horizon}",
        state.n()
    )))
}

// ---------------------------------------------------------------------------
