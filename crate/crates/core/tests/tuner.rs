use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sindyc::library::preset_library;
use sindyc::regression::OptimizerConfig;
use sindyc::transforms::SnapshotSet;
use sindyc::tuner::*;

/// Snapshots whose derivative is an exact sparse combination of library 3.
fn oracle_snapshots(seed: u64, n: usize) -> SnapshotSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(3, n, |_, _| rng.gen_range(-2.0..2.0));
    let u = DMatrix::from_fn(11, n, |_, _| rng.gen_range(-2.0..2.0));
    let lib = preset_library(3).unwrap();
    let theta = lib.evaluate_batch(&x, &u).unwrap();
    let mut xi = DMatrix::zeros(3, lib.len());
    xi[(0, 1)] = 1.5;
    xi[(0, 9)] = -0.7;
    xi[(1, 3)] = 2.0;
    xi[(1, 20)] = 0.25;
    let dxdt = &xi * theta;
    SnapshotSet {
        x_plus: x.clone(),
        x,
        inputs: u,
        outputs: Some(DMatrix::zeros(3, n)),
        dxdt,
        dt: 1e-3,
        subset_columns: vec![n / 2, n - n / 2],
    }
}

fn stlsq_trial(library: u8) -> TrialConfig {
    TrialConfig {
        index: 0,
        library,
        optimizer: OptimizerConfig::stlsq(1e-10, 1e-3),
    }
}

#[test]
fn oracle_trial_has_near_zero_error() {
    let train = oracle_snapshots(1, 2000);
    let val = oracle_snapshots(2, 500);
    let r = run_trial(&stlsq_trial(3), TuneTarget::Dynamics, &train, &val).unwrap();
    assert!(!r.failed());
    assert!(r.normalized_mse < 1e-6, "{}", r.normalized_mse);
    assert_eq!(r.terms, 4);
}

#[test]
fn zero_target_trial() {
    let snaps = oracle_snapshots(3, 400);
    let (train, val) = validation_split(&snaps).unwrap();
    let r = run_trial(&stlsq_trial(1), TuneTarget::Torque, &train, &val).unwrap();
    assert_eq!(r.terms, 0);
    assert_eq!(r.mse, 0.0);
    assert_eq!(r.normalized_mse, 0.0);
}

#[test]
fn identical_configs_identical_results() {
    let snaps = oracle_snapshots(4, 600);
    let (train, val) = validation_split(&snaps).unwrap();
    let mut a = run_trial(&stlsq_trial(3), TuneTarget::Dynamics, &train, &val).unwrap();
    let mut b = run_trial(&stlsq_trial(3), TuneTarget::Dynamics, &train, &val).unwrap();
    a.wall_time = 0.0;
    b.wall_time = 0.0;
    assert_eq!(a, b);
}

#[test]
fn missing_outputs_are_recorded_as_errors_not_panics() {
    let mut snaps = oracle_snapshots(5, 200);
    snaps.outputs = None;
    let (train, val) = validation_split(&snaps).unwrap();
    assert!(run_trial(&stlsq_trial(3), TuneTarget::Ump, &train, &val).is_err());
}

#[test]
fn search_is_reproducible_and_selects_an_exact_model() {
    let snaps = oracle_snapshots(6, 1500);
    let space = SearchSpace {
        libraries: vec![2, 3],
        trials: 12,
        seed: 11,
        ..SearchSpace::default()
    };
    let strip = |mut v: Vec<TrialResult>| {
        v.iter_mut().for_each(|r| r.wall_time = 0.0);
        v
    };
    let a = strip(run_search(&space, TuneTarget::Dynamics, &snaps).unwrap());
    let b = strip(run_search(&space, TuneTarget::Dynamics, &snaps).unwrap());
    assert_eq!(a.len(), 12);
    assert_eq!(a, b);
    for (i, r) in a.iter().enumerate() {
        assert_eq!(r.config.index, i);
        assert_eq!(trace_record(r).len(), TRACE_HEADER.len());
    }
    let front = pareto_front(&a);
    let best = select_trial(&front, SelectionPolicy::MinError).unwrap();
    if a.iter().any(|r| r.config.library == 3 && r.terms >= 4) {
        assert!(best.normalized_mse < 1e-6, "{}", best.normalized_mse);
    }
}

fn fake(index: usize, terms: usize, mse: f64) -> TrialResult {
    TrialResult {
        config: TrialConfig {
            index,
            library: 1,
            optimizer: OptimizerConfig::lasso(0.0),
        },
        mse,
        normalized_mse: mse,
        row_mse: vec![mse],
        terms,
        converged: true,
        wall_time: 0.0,
        error: None,
        model: None,
    }
}

proptest! {
    #[test]
    fn front_is_exactly_the_non_dominated_set(points in proptest::collection::vec((0usize..8, 0u8..6), 1..30)) {
        let results: Vec<TrialResult> = points
            .iter()
            .enumerate()
            .map(|(i, (t, m))| fake(i, *t, *m as f64 * 0.1))
            .collect();
        let front = pareto_front(&results);
        for r in &results {
            let dominated = results.iter().any(|o| {
                o.terms <= r.terms && o.mse <= r.mse && (o.terms < r.terms || o.mse < r.mse)
            });
            let earlier_twin = results.iter().any(|o| o.terms == r.terms && o.mse == r.mse && o.config.index < r.config.index);
            let member = front.iter().any(|f| f.config.index == r.config.index);
            prop_assert_eq!(member, !dominated && !earlier_twin);
        }
        for p in [SelectionPolicy::MinError, SelectionPolicy::MaxSparsity, SelectionPolicy::Knee] {
            let s = select_trial(&front, p).unwrap();
            prop_assert!(front.iter().any(|f| f.config.index == s.config.index));
        }
    }

    #[test]
    fn front_is_permutation_invariant(points in proptest::collection::vec((0usize..8, 0u8..6), 1..20), rot in 0usize..20) {
        let results: Vec<TrialResult> = points
            .iter()
            .enumerate()
            .map(|(i, (t, m))| fake(i, *t, *m as f64 * 0.1))
            .collect();
        let mut rotated = results.clone();
        let k = rot % rotated.len();
        rotated.rotate_left(k);
        prop_assert_eq!(pareto_front(&results), pareto_front(&rotated));
    }
}
