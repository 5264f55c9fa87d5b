//! `evertest` command line.
//!
//! Two ways to run an experiment:
//!
//! * `evertest --config experiment.json [--seed N] [--out-dir DIR]` — run a
//!   declarative config file;
//! * `evertest <test|detect|mixture|erm> [flags]` — assemble the same config
//!   from inline flags.
//!
//! Both write `results.csv`, `summary.json`, and `meta.json` into the output
//! directory (status lines and warnings go to stderr). `evertest bounds
//! --kind ... [flags]` evaluates a closed-form bound and prints a JSON
//! report to stdout without touching the filesystem.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use evertest::eprocess::WealthEvaluator;
use evertest::harness::{
    default_alpha_grid, evaluate_bounds, run_experiment, BoundsRequest, ErmSettings,
    ExperimentConfig, Mode, SourceSpec,
};
use evertest::stats::{ConfusionMatrix, DivergenceKind};

// ---------------------------------------------------------------------------
// Argument types
// ---------------------------------------------------------------------------

#[derive(Parser)]
#[command(
    name = "evertest",
    version,
    about = "Sequential power-one testing and change detection on classifier label streams"
)]
struct Cli {
    /// Experiment config JSON; runs it when no subcommand is given.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override the experiment seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory for results.csv / summary.json / meta.json (default: out).
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,

    /// Worker threads for trial parallelism (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Run sequential-test trials against one label source.
    Test(TestArgs),
    /// Run change-point-detection trials.
    Detect(DetectArgs),
    /// Run mixture trials over several label channels.
    Mixture(MixtureArgs),
    /// Repeatedly pick the max-gap threshold classifier from offline draws.
    Erm(ErmArgs),
    /// Evaluate a closed-form bound and print JSON to stdout.
    Bounds(BoundsArgs),
}

/// Wealth evaluator choice on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EvaluatorArg {
    Exact,
    Grid,
}

impl EvaluatorArg {
    fn resolve(self, grid_points: usize) -> WealthEvaluator {
        match self {
            EvaluatorArg::Exact => WealthEvaluator::Exact,
            EvaluatorArg::Grid => WealthEvaluator::Grid {
                points: grid_points,
            },
        }
    }
}

#[derive(Args)]
struct TestArgs {
    /// Confusion-matrix file (JSON rows or CSV).
    #[arg(long, value_name = "FILE")]
    confusion: PathBuf,

    /// Class generating the stream (0 is the designated null class).
    #[arg(long, default_value_t = 0)]
    theta: usize,

    /// Comma-separated test levels in (0, 1); default: 10 geometric points
    /// from 1e-3 to 1e-1.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    alpha: Option<Vec<f64>>,

    #[arg(long, default_value_t = 300)]
    trials: u64,

    #[arg(long, default_value_t = 100_000)]
    max_steps: u64,

    /// Wealth evaluation backing the stopping rule.
    #[arg(long, value_enum, default_value_t = EvaluatorArg::Exact)]
    evaluator: EvaluatorArg,

    /// Grid resolution when --evaluator grid.
    #[arg(long, default_value_t = 1024)]
    grid_points: usize,

    /// Per-trial CSV destination; bare filenames land in the output
    /// directory.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DetectArgs {
    /// Confusion-matrix file (JSON rows or CSV).
    #[arg(long, value_name = "FILE")]
    confusion: PathBuf,

    /// Pre-change class.
    #[arg(long, default_value_t = 0)]
    pre: usize,

    /// Post-change class (required with --change-at).
    #[arg(long)]
    post: Option<usize>,

    /// 1-based first step drawing post-change labels; omit to measure run
    /// lengths on a pure pre-change stream.
    #[arg(long)]
    change_at: Option<u64>,

    /// Comma-separated false-alarm levels in (0, 1).
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    alpha: Option<Vec<f64>>,

    #[arg(long, default_value_t = 300)]
    trials: u64,

    #[arg(long, default_value_t = 100_000)]
    max_steps: u64,

    /// Keep only this many top windows (plus the newest) per step.
    #[arg(long)]
    prune_cap: Option<usize>,

    /// Per-trial CSV destination; bare filenames land in the output
    /// directory.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MixtureArgs {
    /// Channel confusion-matrix file; repeat once per channel.
    #[arg(long = "confusion", value_name = "FILE", required = true)]
    confusion: Vec<PathBuf>,

    /// Comma-separated channel weights summing to 1.
    #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
    weights: Vec<f64>,

    /// Class generating every channel's stream.
    #[arg(long, default_value_t = 0)]
    theta: usize,

    /// Comma-separated test levels in (0, 1).
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    alpha: Option<Vec<f64>>,

    #[arg(long, default_value_t = 300)]
    trials: u64,

    #[arg(long, default_value_t = 100_000)]
    max_steps: u64,

    /// Per-trial CSV destination; bare filenames land in the output
    /// directory.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ErmArgs {
    /// Comma-separated 1-D class means, exactly two, increasing.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    means: Vec<f64>,

    /// Shared coordinate variance.
    #[arg(long, default_value_t = 1.0)]
    variance: f64,

    /// Lowest candidate threshold.
    #[arg(long, default_value_t = -2.0, allow_hyphen_values = true)]
    threshold_lo: f64,

    /// Highest candidate threshold.
    #[arg(long, default_value_t = 2.0, allow_hyphen_values = true)]
    threshold_hi: f64,

    /// Number of evenly spaced candidate thresholds.
    #[arg(long, default_value_t = 41)]
    thresholds: usize,

    /// Independent offline datasets to draw.
    #[arg(long, default_value_t = 200)]
    repeats: u64,

    /// Offline samples per class in each repeat.
    #[arg(long, default_value_t = 2000)]
    train_per_class: usize,

    /// Per-repeat CSV destination; bare filenames land in the output
    /// directory.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BoundKind {
    /// Expected-stopping-time ceiling.
    Tau,
    /// Offline sample-complexity sufficient condition.
    Vc,
    /// Minimax lower bound on the achievable log e-value.
    Minimax,
    /// Detection-delay reference line.
    Lorden,
    /// Training-size lower bound from pairwise symmetrized divergences.
    MinTraining,
    /// Mismatch tolerance and gap envelope of a confusion matrix.
    Mismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MetricArg {
    Kl,
    Tv,
}

impl From<MetricArg> for DivergenceKind {
    fn from(metric: MetricArg) -> Self {
        match metric {
            MetricArg::Kl => DivergenceKind::Kl,
            MetricArg::Tv => DivergenceKind::Tv,
        }
    }
}

#[derive(Args)]
struct BoundsArgs {
    /// Which bound to evaluate.
    #[arg(long, value_enum)]
    kind: BoundKind,

    /// Level parameter (tau, minimax, lorden, min-training).
    #[arg(long)]
    alpha: Option<f64>,

    /// Minimum identification gap (tau).
    #[arg(long)]
    delta: Option<f64>,

    /// Number of alternative classes, i.e. labels minus one (tau, vc,
    /// minimax).
    #[arg(long = "L")]
    l: Option<u64>,

    /// Required gap margin (vc).
    #[arg(long)]
    gamma: Option<f64>,

    /// Classifier-family complexity dimension (vc).
    #[arg(long)]
    d: Option<f64>,

    /// Failure probability of the offline phase (vc).
    #[arg(long)]
    fail_prob: Option<f64>,

    /// Stream length (minimax).
    #[arg(long)]
    n: Option<u64>,

    /// Largest per-step divergence (minimax).
    #[arg(long)]
    max_kl: Option<f64>,

    /// Capacity constant scaling the training-decay term (minimax).
    #[arg(long)]
    capacity_b: Option<f64>,

    /// Training-set size (minimax).
    #[arg(long)]
    n_train: Option<u64>,

    /// Family margin constant (minimax).
    #[arg(long)]
    m_family: Option<f64>,

    /// Estimation-accuracy parameter (minimax).
    #[arg(long)]
    delta_param: Option<f64>,

    /// Post-change label probabilities, comma-separated (lorden).
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    post: Option<Vec<f64>>,

    /// Pre-change label probabilities, comma-separated (lorden).
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pre: Option<Vec<f64>>,

    /// JSON file holding the pairwise symmetrized-divergence matrix
    /// (min-training).
    #[arg(long, value_name = "FILE")]
    pairwise: Option<PathBuf>,

    /// Confusion-matrix file (mismatch).
    #[arg(long, value_name = "FILE")]
    confusion: Option<PathBuf>,

    /// Divergence metric (mismatch).
    #[arg(long, value_enum, default_value_t = MetricArg::Kl)]
    metric: MetricArg,

    /// Training/deployment divergence to widen the gap envelope with
    /// (mismatch).
    #[arg(long)]
    eps: Option<f64>,
}

// ---------------------------------------------------------------------------
// Construction helpers
// ---------------------------------------------------------------------------

fn need<T>(value: Option<T>, flag: &str, kind: &str) -> Result<T> {
    value.with_context(|| format!("--kind {kind} requires {flag}"))
}

fn confusion_source(path: PathBuf) -> SourceSpec {
    SourceSpec::Confusion {
        path: Some(path),
        rows: None,
    }
}

fn alpha_grid_or_default(alpha: Option<Vec<f64>>) -> Vec<f64> {
    alpha.unwrap_or_else(default_alpha_grid)
}

/// A config with every field a subcommand does not set left at its resting
/// value.
fn base_config(mode: Mode) -> ExperimentConfig {
    ExperimentConfig {
        mode,
        source: None,
        channels: Vec::new(),
        weights: None,
        alpha_grid: default_alpha_grid(),
        trials: 300,
        max_steps: 100_000,
        seed: 7,
        theta: 0,
        change_at: None,
        pre: None,
        post: None,
        evaluator: WealthEvaluator::Exact,
        prune_cap: None,
        erm: None,
        bounds: None,
    }
}

fn build_test_config(args: TestArgs) -> (ExperimentConfig, Option<PathBuf>) {
    let mut config = base_config(Mode::Test);
    config.source = Some(confusion_source(args.confusion));
    config.theta = args.theta;
    config.alpha_grid = alpha_grid_or_default(args.alpha);
    config.trials = args.trials;
    config.max_steps = args.max_steps;
    config.evaluator = args.evaluator.resolve(args.grid_points);
    (config, args.out)
}

fn build_detect_config(args: DetectArgs) -> (ExperimentConfig, Option<PathBuf>) {
    let mut config = base_config(Mode::Detect);
    config.source = Some(confusion_source(args.confusion));
    config.pre = Some(args.pre);
    config.post = args.post;
    config.change_at = args.change_at;
    config.alpha_grid = alpha_grid_or_default(args.alpha);
    config.trials = args.trials;
    config.max_steps = args.max_steps;
    config.prune_cap = args.prune_cap;
    (config, args.out)
}

fn build_mixture_config(args: MixtureArgs) -> (ExperimentConfig, Option<PathBuf>) {
    let mut config = base_config(Mode::Mixture);
    config.channels = args.confusion.into_iter().map(confusion_source).collect();
    config.weights = Some(args.weights);
    config.theta = args.theta;
    config.alpha_grid = alpha_grid_or_default(args.alpha);
    config.trials = args.trials;
    config.max_steps = args.max_steps;
    (config, args.out)
}

fn build_erm_config(args: ErmArgs) -> Result<(ExperimentConfig, Option<PathBuf>)> {
    let mut config = base_config(Mode::Erm);
    if args.means.len() != 2 {
        bail!("--means takes exactly two values, e.g. --means -1,1");
    }
    config.source = Some(SourceSpec::Gaussian {
        means: args.means.iter().map(|&m| vec![m]).collect(),
        variances: vec![args.variance],
        train_per_class: args.train_per_class,
        eval_per_class: args.train_per_class,
    });
    if args.thresholds < 2 {
        bail!("--thresholds must be >= 2");
    }
    let step = (args.threshold_hi - args.threshold_lo) / (args.thresholds - 1) as f64;
    config.erm = Some(ErmSettings {
        thresholds: (0..args.thresholds)
            .map(|i| args.threshold_lo + step * i as f64)
            .collect(),
        repeats: args.repeats,
        train_per_class: args.train_per_class,
    });
    Ok((config, args.out))
}

fn build_bounds_request(args: BoundsArgs) -> Result<BoundsRequest> {
    let kind = args.kind;
    Ok(match kind {
        BoundKind::Tau => BoundsRequest::Tau {
            alpha: need(args.alpha, "--alpha", "tau")?,
            delta: need(args.delta, "--delta", "tau")?,
            l: need(args.l, "--L", "tau")?,
        },
        BoundKind::Vc => BoundsRequest::Vc {
            gamma: need(args.gamma, "--gamma", "vc")?,
            d: need(args.d, "--d", "vc")?,
            l: need(args.l, "--L", "vc")?,
            fail_prob: need(args.fail_prob, "--fail-prob", "vc")?,
        },
        BoundKind::Minimax => BoundsRequest::Minimax {
            n: need(args.n, "--n", "minimax")?,
            alpha: need(args.alpha, "--alpha", "minimax")?,
            max_kl: need(args.max_kl, "--max-kl", "minimax")?,
            capacity_b: need(args.capacity_b, "--capacity-b", "minimax")?,
            n_train: need(args.n_train, "--n-train", "minimax")?,
            m_family: need(args.m_family, "--m-family", "minimax")?,
            l: need(args.l, "--L", "minimax")?,
            delta_param: need(args.delta_param, "--delta-param", "minimax")?,
        },
        BoundKind::Lorden => BoundsRequest::Lorden {
            alpha: need(args.alpha, "--alpha", "lorden")?,
            post: need(args.post, "--post", "lorden")?,
            pre: need(args.pre, "--pre", "lorden")?,
        },
        BoundKind::MinTraining => {
            let path = need(args.pairwise, "--pairwise", "min-training")?;
            let text = fs::read_to_string(&path)
                .with_context(|| format!("failed to read {}", path.display()))?;
            BoundsRequest::MinTraining {
                alpha: need(args.alpha, "--alpha", "min-training")?,
                pairwise_j: serde_json::from_str(&text)
                    .with_context(|| format!("{} is not a JSON matrix", path.display()))?,
            }
        }
        BoundKind::Mismatch => {
            let path = need(args.confusion, "--confusion", "mismatch")?;
            let matrix = ConfusionMatrix::from_path(&path)
                .with_context(|| format!("failed to load {}", path.display()))?;
            BoundsRequest::Mismatch {
                rows: matrix
                    .rows()
                    .iter()
                    .map(|row| row.probs().to_vec())
                    .collect(),
                metric: args.metric.into(),
                eps: args.eps,
            }
        }
    })
}

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

/// Runs a config and places the per-trial CSV where `--out` asked (bare
/// filenames resolve inside the output directory).
fn execute(
    mut config: ExperimentConfig,
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
    out_csv: Option<PathBuf>,
) -> Result<()> {
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let out_dir = out_dir.unwrap_or_else(|| PathBuf::from("out"));
    let csv_target = out_csv.map(|p| {
        let has_dir = p.parent().is_some_and(|d| !d.as_os_str().is_empty());
        if p.is_absolute() || has_dir {
            p
        } else {
            out_dir.join(p)
        }
    });
    let run_dir: &Path = match &csv_target {
        Some(p) => p.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new(".")),
        None => &out_dir,
    };

    let artifacts = run_experiment(&config, run_dir)
        .context("experiment failed")?;
    for warning in &artifacts.summary.warnings {
        eprintln!("warning: {warning}");
    }
    let mut results_path = artifacts.results_path.clone();
    if let (Some(target), Some(actual)) = (&csv_target, &artifacts.results_path) {
        if target != actual {
            fs::rename(actual, target)
                .with_context(|| format!("failed to move results to {}", target.display()))?;
            results_path = Some(target.clone());
        }
    }
    if let Some(p) = &results_path {
        eprintln!("wrote {}", p.display());
    }
    eprintln!("wrote {}", artifacts.summary_path.display());
    eprintln!("wrote {}", artifacts.meta_path.display());

    // Bounds reports are the payload; surface them on stdout.
    if let Some(report) = &artifacts.summary.bounds {
        println!("{}", serde_json::to_string_pretty(report)?);
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("failed to size the worker pool")?;
    }

    match (cli.config, cli.command) {
        (Some(_), Some(_)) => {
            bail!("give either --config or a subcommand, not both")
        }
        (None, None) => {
            bail!("nothing to do: pass --config FILE or a subcommand (see --help)")
        }
        (Some(path), None) => {
            let config = ExperimentConfig::from_path(&path)
                .with_context(|| format!("failed to load config {}", path.display()))?;
            execute(config, cli.seed, cli.out_dir, None)
        }
        (None, Some(Command::Bounds(args))) => {
            let report = evaluate_bounds(&build_bounds_request(args)?)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
        (None, Some(command)) => {
            let (config, out_csv) = match command {
                Command::Test(args) => build_test_config(args),
                Command::Detect(args) => build_detect_config(args),
                Command::Mixture(args) => build_mixture_config(args),
                Command::Erm(args) => build_erm_config(args)?,
                Command::Bounds(_) => unreachable!("handled above"),
            };
            execute(config, cli.seed, cli.out_dir, out_csv)
        }
    }
}
