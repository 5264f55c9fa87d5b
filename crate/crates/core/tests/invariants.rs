//! Property-based and Monte-Carlo invariants: divergence inequalities,
//! permutation invariance, evaluator agreement on label paths, the
//! supermartingale/growth dichotomy, detector dominance and cost structure,
//! envelope containment under perturbation, bound monotonicity, sampler
//! concentration, and the full Gaussian train-estimate-test pipeline.

mod common;

use common::*;
use evertest::bounds::{gap_envelope, mismatch_tolerance, minimax_log_psi_lower, tau_upper_bound, vc_sample_size};
use evertest::detector::{run_detector, Detector};
use evertest::eprocess::{wealth_exact, wealth_grid, BetCounts, EProcessState};
use evertest::sequential::{run_test, TestConfig};
use evertest::sim::{
    estimate_confusion, multinomial_stream, train_centroid, GaussianTupleSpec, OfflineDataset,
    PmfSampler,
};
use evertest::stats::{gaps, is_separable, kl_pmf, tv_pmf, ConfusionMatrix, DivergenceKind, LabelPmf};
use proptest::prelude::*;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------------
// Strategies
// ---------------------------------------------------------------------------

fn normalize(raw: Vec<f64>) -> Vec<f64> {
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|p| p / total).collect()
}

/// Two pmfs over the same label set, bounded away from zero.
fn pmf_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..=5).prop_flat_map(|l| {
        (
            prop::collection::vec(0.05f64..1.0, l),
            prop::collection::vec(0.05f64..1.0, l),
        )
            .prop_map(|(p, q)| (normalize(p), normalize(q)))
    })
}

/// A random square stochastic matrix plus a permutation of its labels.
fn matrix_and_permutation() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<usize>)> {
    (2usize..=4).prop_flat_map(|l| {
        let rows = prop::collection::vec(prop::collection::vec(0.05f64..1.0, l), l)
            .prop_map(|rows| rows.into_iter().map(normalize).collect::<Vec<_>>());
        let perm = Just((0..l).collect::<Vec<usize>>()).prop_shuffle();
        (rows, perm)
    })
}

// ---------------------------------------------------------------------------
// Divergences and separability
// ---------------------------------------------------------------------------

proptest! {
    /// Pinsker: KL(p, q) >= 2 TV(p, q)^2, KL >= 0, and KL(p, p) = 0.
    #[test]
    fn kl_dominates_twice_squared_tv((p, q) in pmf_pair()) {
        let p = LabelPmf::new(p).unwrap();
        let q = LabelPmf::new(q).unwrap();
        let kl = kl_pmf(&p, &q).unwrap();
        let tv = tv_pmf(&p, &q).unwrap();
        prop_assert!(kl >= 2.0 * tv * tv - 1e-12);
        prop_assert!(kl >= -1e-15);
        prop_assert!(kl_pmf(&p, &p).unwrap().abs() <= 1e-12);
    }

    /// Relabeling the classes (same permutation on rows and columns) cannot
    /// change whether a matrix is separable; the null self-gap is always 0
    /// and separability coincides with a positive minimum pairwise gap.
    #[test]
    fn separability_is_invariant_under_relabeling((rows, perm) in matrix_and_permutation()) {
        let l = rows.len();
        let permuted: Vec<Vec<f64>> = (0..l)
            .map(|i| (0..l).map(|j| rows[perm[i]][perm[j]]).collect())
            .collect();
        let original = ConfusionMatrix::new(rows).unwrap();
        let relabeled = ConfusionMatrix::new(permuted).unwrap();
        prop_assert_eq!(is_separable(&original), is_separable(&relabeled));

        let report = gaps(&original);
        prop_assert_eq!(report.null_gaps[0], 0.0);
        prop_assert_eq!(is_separable(&original), report.min_pairwise_gap > 0.0);
    }
}

// ---------------------------------------------------------------------------
// Wealth engine
// ---------------------------------------------------------------------------

proptest! {
    /// Wealth strictly falls with an extra null hit and strictly rises with
    /// an extra leader hit.
    #[test]
    fn wealth_is_monotone_in_the_bet_counts(a in 0u64..200, b in 0u64..200) {
        let here = wealth_exact(BetCounts::new(a, b));
        prop_assert!(wealth_exact(BetCounts::new(a + 1, b)) < here);
        prop_assert!(wealth_exact(BetCounts::new(a, b + 1)) > here);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// The 1024-point grid evaluator tracks the closed form within 1e-3 on
    /// the bets produced by random label paths (up to 200 steps, so
    /// a + b <= 200).
    #[test]
    fn grid_tracks_exact_on_random_label_paths(
        raw in prop::collection::vec(0.05f64..1.0, 2..=4),
        seed in 0u64..1_000_000,
    ) {
        let pmf = LabelPmf::new(normalize(raw)).unwrap();
        let sampler = PmfSampler::new(&pmf);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = EProcessState::new(pmf.len()).unwrap();
        for _ in 0..200 {
            state.step(sampler.draw(&mut rng)).unwrap();
            let exact = wealth_exact(state.bet());
            let grid = wealth_grid(state.bet(), 1024).unwrap();
            prop_assert!(((grid - exact) / exact).abs() <= 1e-3);
        }
    }
}

/// Under a diagonally dominant null row the wealth is a supermartingale:
/// its Monte-Carlo mean at checkpoints 10, 50, and 200 stays within three
/// standard errors of (at most) 1.
#[test]
fn wealth_mean_stays_below_one_under_the_null() {
    let pmf = LabelPmf::new(weak3()[0].clone()).unwrap();
    let sampler = PmfSampler::new(&pmf);
    let checkpoints = [10u64, 50, 200];
    let reps = 10_000u64;
    let mut samples: Vec<Vec<f64>> = vec![Vec::with_capacity(reps as usize); 3];
    for rep in 0..reps {
        let mut rng = ChaCha8Rng::seed_from_u64(40_000 + rep);
        let mut state = EProcessState::new(3).unwrap();
        for t in 1..=200u64 {
            state.step(sampler.draw(&mut rng)).unwrap();
            if let Some(slot) = checkpoints.iter().position(|&c| c == t) {
                samples[slot].push(state.wealth());
            }
        }
    }
    for (slot, &checkpoint) in checkpoints.iter().enumerate() {
        let m = mean(&samples[slot]);
        let se = standard_error(&samples[slot]);
        assert!(
            m <= 1.0 + 3.0 * se,
            "mean wealth {m} at step {checkpoint} exceeds 1 + 3 x {se}"
        );
    }
}

/// Under an alternative with gap 0.35503 the log wealth grows linearly; by
/// step 2000 every stream's per-step rate clears the guaranteed
/// gap^2 / 32 floor (minus Monte-Carlo slack).
#[test]
fn log_wealth_grows_linearly_under_an_alternative() {
    let pmf = LabelPmf::new(weak3()[2].clone()).unwrap();
    let sampler = PmfSampler::new(&pmf);
    let floor = 0.35503f64 * 0.35503 / 32.0;
    for stream in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(50_000 + stream);
        let mut state = EProcessState::new(3).unwrap();
        for _ in 0..2000 {
            state.step(sampler.draw(&mut rng)).unwrap();
        }
        let rate = state.log_wealth() / 2000.0;
        assert!(
            rate >= floor - 0.002,
            "stream {stream}: growth rate {rate} below floor {floor}"
        );
    }
}

// ---------------------------------------------------------------------------
// Sequential test
// ---------------------------------------------------------------------------

/// Identical seeds and configuration reproduce the run bit for bit.
#[test]
fn test_runs_are_deterministic_for_a_fixed_seed() {
    let pmf = LabelPmf::new(weak3()[2].clone()).unwrap();
    let config = TestConfig::new(0.01, 5000).unwrap();
    let run = |seed: u64| {
        let rng = ChaCha8Rng::seed_from_u64(seed);
        run_test(3, multinomial_stream(&pmf, rng), &config).unwrap()
    };
    let first = run(99);
    let second = run(99);
    assert_eq!(first.stopped, second.stopped);
    assert_eq!(first.tau, second.tau);
    assert_eq!(first.leader_at_stop, second.leader_at_stop);
    assert_eq!(
        first.final_log_wealth.to_bits(),
        second.final_log_wealth.to_bits()
    );
    assert_eq!(first.bet, second.bet);
}

// ---------------------------------------------------------------------------
// Change detector
// ---------------------------------------------------------------------------

/// On a stream that changes at step T, the detector's delay is dominated by
/// the stopping time of the plain sequential test run on the post-change
/// segment alone (the detector contains that restart among its windows).
#[test]
fn detector_delay_is_dominated_by_the_matched_sequential_test() {
    let pre = LabelPmf::new(detect2()[0].clone()).unwrap();
    let post = LabelPmf::new(detect2()[1].clone()).unwrap();
    let pre_sampler = PmfSampler::new(&pre);
    let post_sampler = PmfSampler::new(&post);
    let change_at = 10usize;
    let alpha = 0.01;
    let mut delays = Vec::new();
    let mut taus = Vec::new();
    for trial in 0..300u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(60_000 + trial);
        let pre_labels: Vec<usize> = (0..change_at).map(|_| pre_sampler.draw(&mut rng)).collect();
        let post_labels: Vec<usize> = (0..5000).map(|_| post_sampler.draw(&mut rng)).collect();

        let combined = pre_labels.iter().chain(&post_labels).copied();
        let detection = run_detector(2, combined, alpha, 5010, None).unwrap();
        assert!(detection.alarmed, "trial {trial} missed the change");
        delays.push(detection.alarm_time.unwrap().saturating_sub(change_at as u64) as f64);

        let test = run_test(2, post_labels.iter().copied(), &TestConfig::new(alpha, 5000).unwrap())
            .unwrap();
        assert!(test.stopped, "trial {trial} sequential test did not stop");
        taus.push(test.tau as f64);
    }
    let mean_delay = mean(&delays);
    let mean_tau = mean(&taus);
    let se_tau = standard_error(&taus);
    assert!(
        mean_delay <= mean_tau + 3.0 * se_tau,
        "mean delay {mean_delay} exceeds mean tau {mean_tau} + 3 x {se_tau}"
    );
}

/// Per-step work scales with the number of live windows: an uncapped
/// detector touches n windows at step n, while a capped one stays at the
/// cap (plus the newest window), an order of magnitude less over a long
/// null stream.
#[test]
fn detector_cost_tracks_the_live_window_count() {
    let pmf = LabelPmf::new(detect2()[0].clone()).unwrap();
    let sampler = PmfSampler::new(&pmf);
    let steps = 2000usize;
    let cap = 64usize;

    let mut rng = ChaCha8Rng::seed_from_u64(70_000);
    let labels: Vec<usize> = (0..steps).map(|_| sampler.draw(&mut rng)).collect();

    let mut full = Detector::new(2).unwrap();
    let mut capped = Detector::with_prune_cap(2, cap).unwrap();
    let mut full_work = 0usize;
    let mut capped_work = 0usize;
    for (t, &label) in labels.iter().enumerate() {
        full.step(label).unwrap();
        capped.step(label).unwrap();
        assert_eq!(full.starts().len(), t + 1, "uncapped window count is linear");
        assert!(capped.starts().len() <= cap + 1, "capped window count is bounded");
        full_work += full.starts().len();
        capped_work += capped.starts().len();
    }
    assert_eq!(full_work, steps * (steps + 1) / 2);
    assert!(
        capped_work <= (cap + 1) * steps,
        "capped work {capped_work} exceeds the linear budget"
    );
    assert!(
        (capped_work as f64) < 0.1 * full_work as f64,
        "capping should cut the measured work by an order of magnitude \
         ({capped_work} vs {full_work})"
    );
}

// ---------------------------------------------------------------------------
// Mismatch envelope
// ---------------------------------------------------------------------------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    /// For any perturbed matrix whose worst per-class KL stays within the
    /// tolerance, every perturbed null gap lies inside the predicted
    /// envelope computed from the original matrix alone.
    #[test]
    fn envelope_contains_gaps_of_perturbed_matrices(
        base in 0usize..3,
        scale in 0.0f64..0.08,
        seed in 0u64..1_000_000,
    ) {
        let rows = [train2(), weak3(), strong3()][base].clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let perturbed_rows: Vec<Vec<f64>> = rows
            .iter()
            .map(|row| {
                normalize(
                    row.iter()
                        .map(|p| (p + scale * (rng.random::<f64>() - 0.5)).max(1e-3))
                        .collect(),
                )
            })
            .collect();
        let original = ConfusionMatrix::new(rows).unwrap();
        let perturbed = ConfusionMatrix::new(perturbed_rows).unwrap();

        let eps = (0..original.num_labels())
            .map(|r| kl_pmf(original.row(r), perturbed.row(r)).unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        let report = gaps(&original);
        let tolerance = mismatch_tolerance(&report, DivergenceKind::Kl).unwrap();
        prop_assume!(eps <= 0.999 * tolerance);

        let envelope = gap_envelope(&report, eps, DivergenceKind::Kl).unwrap();
        let perturbed_gaps = gaps(&perturbed).null_gaps;
        for theta in 1..original.num_labels() {
            let (lo, hi) = envelope[theta];
            prop_assert!(
                lo - 1e-9 <= perturbed_gaps[theta] && perturbed_gaps[theta] <= hi + 1e-9,
                "class {} gap {} outside [{}, {}] at eps {}",
                theta, perturbed_gaps[theta], lo, hi, eps
            );
        }
    }
}

// ---------------------------------------------------------------------------
// Bound calculators
// ---------------------------------------------------------------------------

/// The stopping-time ceiling shrinks as the gap widens and grows as alpha
/// tightens.
#[test]
fn tau_ceiling_is_monotone_in_gap_and_alpha() {
    let mut previous = f64::INFINITY;
    for i in 0..17 {
        let delta = 0.1 + 0.05 * i as f64;
        let total = tau_upper_bound(0.05, delta, 2).unwrap().total;
        assert!(
            total <= previous + 1e-9,
            "ceiling rose from {previous} to {total} as the gap widened to {delta}"
        );
        previous = total;
    }

    let mut previous = f64::INFINITY;
    for i in 0..20 {
        let alpha = 1e-6 * (0.5f64 / 1e-6).powf(i as f64 / 19.0);
        let total = tau_upper_bound(alpha, 0.35, 2).unwrap().total;
        assert!(
            total <= previous + 1e-9,
            "ceiling rose from {previous} to {total} as alpha loosened to {alpha}"
        );
        previous = total;
    }
}

proptest! {
    /// The sample-size and minimax calculators are total on their stated
    /// domains: finite outputs, no panics.
    #[test]
    fn sample_size_calculators_are_total(
        gamma in 0.01f64..0.99,
        d in 1.0f64..50.0,
        l in 1u64..20,
        delta in 1e-6f64..0.5,
        n in 1u64..10_000,
        alpha in 1e-6f64..0.5,
        max_kl in 0.0f64..10.0,
        capacity in 0.0f64..100.0,
        n_train in 1u64..10_000,
        m_family in 1.0f64..100.0,
    ) {
        let size = vc_sample_size(gamma, d, l, delta).unwrap();
        prop_assert!(size.is_finite() && size > 0.0);

        let psi = minimax_log_psi_lower(n, alpha, max_kl, capacity, n_train, m_family, l, delta)
            .unwrap();
        prop_assert!(psi.is_finite());
    }
}

// ---------------------------------------------------------------------------
// Label sampler concentration
// ---------------------------------------------------------------------------

/// Empirical label frequencies over 1e5 draws stay within the
/// Hoeffding-plus-union band of the target pmf.
#[test]
fn stream_frequencies_concentrate_at_the_hoeffding_rate() {
    let n = 100_000usize;
    let delta = 1e-3f64;
    for case in 0..16u64 {
        let len = 2 + (case % 4) as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(80_000 + case);
        let probs = normalize((0..len).map(|_| rng.random_range(0.05..1.0)).collect());
        let pmf = LabelPmf::new(probs.clone()).unwrap();
        let mut counts = vec![0u64; len];
        for label in multinomial_stream(&pmf, rng).take(n) {
            counts[label] += 1;
        }
        let bound = 3.0 * ((2.0 * len as f64 / delta).ln() / (2.0 * n as f64)).sqrt();
        for (k, &count) in counts.iter().enumerate() {
            let gap = (count as f64 / n as f64 - probs[k]).abs();
            assert!(
                gap <= bound,
                "case {case}: label {k} frequency off by {gap} > {bound}"
            );
        }
    }
}

// ---------------------------------------------------------------------------
// End-to-end Gaussian pipeline
// ---------------------------------------------------------------------------

/// Train a centroid classifier on offline Gaussian draws, estimate its
/// confusion matrix, and run the sequential test on the induced label
/// stream: the matrix matches the normal-mass prediction and the test
/// identifies the active class.
#[test]
fn gaussian_train_estimate_test_pipeline_hangs_together() {
    let spec = GaussianTupleSpec::new(vec![vec![-1.0], vec![1.0]], vec![1.0]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(90_000);
    let dataset = OfflineDataset::sample_from(&spec, 10_000, &mut rng).unwrap();
    let classifier = train_centroid(&dataset).unwrap();
    let matrix = estimate_confusion(&classifier, &spec, 100_000, &mut rng).unwrap();

    // Unit-variance classes two means apart with a mid-point boundary keep
    // about phi(1) = 0.8413 of their mass on the correct side.
    for class in 0..2 {
        let diag = matrix.row(class).probs()[class];
        assert!(
            (diag - 0.8413).abs() <= 0.01,
            "class {class} diagonal {diag} far from the normal-mass prediction"
        );
        let sum: f64 = matrix.row(class).probs().iter().sum();
        assert!((sum - 1.0).abs() <= 1e-9);
    }
    assert!(is_separable(&matrix));

    let stream_rng = ChaCha8Rng::seed_from_u64(90_001);
    let result = run_test(
        2,
        multinomial_stream(matrix.row(1), stream_rng),
        &TestConfig::new(0.01, 10_000).unwrap(),
    )
    .unwrap();
    assert!(result.stopped);
    assert_eq!(result.leader_at_stop, 1);
}
