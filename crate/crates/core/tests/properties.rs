use cheapet_core::routing::forward_fraction;
use cheapet_core::synthetic::{TraceParams, calibrated_trace, softmax_scores};
use cheapet_core::trace::{TraceMode, TraceReader, write_trace_to};
use cheapet_core::{
    ActivationVector, AdaptationState, EvalOptions, MdsaModel, PredictionRecord, ProbabilityVector,
    Route, RoutingPolicy, SupervisorKind, adapt, calibrate_threshold, decide, fit_mdsa,
    mdsa_distance, softmax_confidence, sweep_curve,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn simplex(k: usize) -> impl Strategy<Value = ProbabilityVector> {
    prop::collection::vec(0.001f64..1.0, k).prop_map(|raw| {
        let s: f64 = raw.iter().sum();
        ProbabilityVector::new(raw.into_iter().map(|v| v / s).collect()).unwrap()
    })
}

fn activations(n: usize, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-10.0f64..10.0, d), n)
}

proptest! {
    #[test]
    fn softmax_confidence_in_bounds(p in (2usize..8).prop_flat_map(simplex)) {
        let k = p.num_classes() as f64;
        let c = softmax_confidence(&p).value();
        prop_assert!(c >= 1.0 / k - 1e-12 && c <= 1.0);
    }

    #[test]
    fn distance_non_negative_and_zero_at_mean(rows in activations(8, 3), x in prop::collection::vec(-10.0f64..10.0, 3)) {
        let acts: Vec<_> = rows.into_iter().map(|r| ActivationVector::new(r).unwrap()).collect();
        let model = fit_mdsa(&acts, &[], false, 1e-6).unwrap();
        let d = mdsa_distance(&model, &ActivationVector::new(x).unwrap(), 0).unwrap();
        prop_assert!(d >= 0.0);
        let mean = model.classes().next().unwrap().1.mean.clone();
        prop_assert_eq!(mdsa_distance(&model, &ActivationVector::new(mean).unwrap(), 0).unwrap(), 0.0);
    }

    #[test]
    fn fit_is_deterministic(rows in activations(6, 2)) {
        let acts: Vec<_> = rows.into_iter().map(|r| ActivationVector::new(r).unwrap()).collect();
        let a = fit_mdsa(&acts, &[], false, 1e-6).unwrap();
        let b = fit_mdsa(&acts, &[], false, 1e-6).unwrap();
        let (sa, sb) = (a.classes().next().unwrap().1, b.classes().next().unwrap().1);
        prop_assert!(sa.mean.iter().zip(&sb.mean).all(|(x, y)| x.to_bits() == y.to_bits()));
        prop_assert!(sa.precision.iter().zip(&sb.precision).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn decide_monotone_in_threshold(score in -5.0f64..5.0, t1 in -5.0f64..5.0, dt in 0.0f64..3.0) {
        let low = decide(score, &RoutingPolicy::new(SupervisorKind::Sm, t1).unwrap()).unwrap();
        let high = decide(score, &RoutingPolicy::new(SupervisorKind::Sm, t1 + dt).unwrap()).unwrap();
        prop_assert!(!(low.route == Route::Remote && high.route == Route::Local));
        prop_assert_eq!(low.trusted, low.route == Route::Local);
        prop_assert_eq!(low.trusted, score >= t1);
    }

    #[test]
    fn routing_invariant_under_monotone_transform(scores in prop::collection::vec(-3.0f64..3.0, 1..40), t in -3.0f64..3.0) {
        let f = |x: f64| x.exp() * 2.0 + 1.0;
        let p = RoutingPolicy::new(SupervisorKind::Sm, t).unwrap();
        let q = RoutingPolicy::new(SupervisorKind::Sm, f(t)).unwrap();
        for s in scores {
            prop_assert_eq!(decide(s, &p).unwrap().route, decide(f(s), &q).unwrap().route);
        }
    }

    #[test]
    fn forward_fraction_is_monotone_step(scores in prop::collection::vec(-3.0f64..3.0, 1..40), a in -4.0f64..4.0, b in -4.0f64..4.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(forward_fraction(&scores, lo) <= forward_fraction(&scores, hi));
    }

    #[test]
    fn calibration_within_one_over_n(mut scores in prop::collection::vec(-100.0f64..100.0, 1..200), step in 0usize..=10) {
        scores.sort_by(f64::total_cmp);
        scores.dedup();
        let target = step as f64 / 10.0;
        let c = calibrate_threshold(&scores, target).unwrap();
        let achieved = forward_fraction(&scores, c.threshold);
        prop_assert_eq!(achieved, c.achieved_forward_fraction);
        prop_assert!((achieved - target).abs() <= 1.0 / scores.len() as f64 + 1e-12);
    }

    #[test]
    fn sweep_invariants(seed in 0u64..1000, n in 1usize..60) {
        let trace = calibrated_trace(&TraceParams { n, seed, ..Default::default() });
        let scores = softmax_scores(&trace);
        let report = sweep_curve(&trace, &scores, SupervisorKind::Sm, "p", EvalOptions::default()).unwrap();
        let nf = n as f64;
        for w in report.curve.windows(2) {
            prop_assert!(w[0].cost_saving >= w[1].cost_saving);
            prop_assert!(w[0].forward_fraction < w[1].forward_fraction);
            prop_assert!((w[0].system_accuracy - w[1].system_accuracy).abs()
                <= (w[1].n_remote - w[0].n_remote) as f64 / nf + 1e-12);
        }
        for p in &report.curve {
            prop_assert_eq!(p.cost_saving + p.forward_fraction, 1.0);
            prop_assert!((0.0..=1.0).contains(&p.system_accuracy));
            prop_assert_eq!(p.n_local + p.n_remote, n);
        }

        // Shuffle records and scores together.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            idx.swap(i, rng.random_range(0..=i));
        }
        let t2: Vec<_> = idx.iter().map(|&i| trace[i].clone()).collect();
        let s2: Vec<_> = idx.iter().map(|&i| scores[i]).collect();
        let shuffled = sweep_curve(&t2, &s2, SupervisorKind::Sm, "p", EvalOptions::default()).unwrap();
        prop_assert_eq!(shuffled.curve, report.curve);
    }

    #[test]
    fn trace_roundtrip(seed in 0u64..500, n in 0usize..20) {
        let mut trace = calibrated_trace(&TraceParams { n, seed, ..Default::default() });
        for (i, r) in trace.iter_mut().enumerate() {
            if i % 3 == 0 {
                r.features = Some(vec![i as f64 * 0.1, -1.5e-7]);
            }
            if i % 4 == 1 {
                r.remote_label = None;
                r.remote_cost_units = None;
            }
        }
        let mut buf = Vec::new();
        write_trace_to(&mut buf, &trace).unwrap();
        let back: Vec<PredictionRecord> = TraceReader::new(buf.as_slice(), TraceMode::Strict)
            .collect::<Result<_, _>>()
            .unwrap();
        prop_assert_eq!(back, trace);
    }
}

/// Refitting on linearly transformed data leaves distances unchanged.
#[test]
fn mahalanobis_affine_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..50 {
        let d = rng.random_range(1..=4usize);
        let rows: Vec<Vec<f64>> = (0..(d + 10))
            .map(|_| (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
            .collect();
        // Diagonally dominant, hence invertible.
        let mut a: Vec<f64> = (0..d * d)
            .map(|_| rng.random::<f64>() * 2.0 - 1.0)
            .collect();
        for i in 0..d {
            a[i * d + i] += d as f64 + 1.0;
        }
        let apply = |v: &[f64]| -> Vec<f64> {
            (0..d)
                .map(|i| (0..d).map(|j| a[i * d + j] * v[j]).sum())
                .collect()
        };
        let x: Vec<f64> = (0..d).map(|_| rng.random::<f64>() * 3.0).collect();
        let orig: Vec<_> = rows
            .iter()
            .map(|r| ActivationVector::new(r.clone()).unwrap())
            .collect();
        let mapped: Vec<_> = rows
            .iter()
            .map(|r| ActivationVector::new(apply(r)).unwrap())
            .collect();
        let m1 = fit_mdsa(&orig, &[], false, 0.0).unwrap();
        let m2 = fit_mdsa(&mapped, &[], false, 0.0).unwrap();
        let d1 = mdsa_distance(&m1, &ActivationVector::new(x.clone()).unwrap(), 0).unwrap();
        let d2 = mdsa_distance(&m2, &ActivationVector::new(apply(&x)).unwrap(), 0).unwrap();
        assert!((d1 - d2).abs() <= 1e-6 * d1.max(1e-12), "{d1} vs {d2}");
    }
}

/// Along a covariance eigenvector, more shrinkage never increases distance.
#[test]
fn regularization_monotone_on_diagonal() {
    let cov = [3.0, 0.0, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0, 0.01];
    for axis in 0..3 {
        let mut x = vec![0.0; 3];
        x[axis] = 1.7;
        let x = ActivationVector::new(x).unwrap();
        let mut last = f64::INFINITY;
        for lambda in [0.0, 1e-6, 1e-3, 0.1, 1.0, 10.0] {
            let model = MdsaModel::from_moments(vec![0.0; 3], &cov, lambda).unwrap();
            let d = mdsa_distance(&model, &x, 0).unwrap();
            assert!(d <= last, "axis {axis} lambda {lambda}: {d} > {last}");
            last = d;
        }
    }
}

/// Stationary uniform scores; adaptation starts from a poorly calibrated
/// threshold and must settle near the target.
#[test]
fn adaptation_tracks_target() {
    for target in [0.2, 0.5, 0.8] {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let calibration: Vec<f64> = (0..50).map(|_| rng.random::<f64>()).collect();
        let c = calibrate_threshold(&calibration, target).unwrap();
        let mut policy = RoutingPolicy::new(SupervisorKind::Sm, c.threshold)
            .unwrap()
            .with_target(target)
            .unwrap();
        let mut state = AdaptationState::with_defaults(target).unwrap();
        let mut forwarded = 0;
        for _ in 0..1000 {
            let d = decide(rng.random::<f64>(), &policy).unwrap();
            forwarded += (d.route == Route::Remote) as usize;
            (state, policy) = adapt(&state, &policy, &d).unwrap();
        }
        let rate = forwarded as f64 / 1000.0;
        assert!(
            (rate - target).abs() <= 0.05,
            "target {target}: rate {rate}"
        );
    }
}
