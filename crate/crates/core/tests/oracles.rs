//! Independent oracles checked against the library's computation paths.

use cheapet_core::local::{Layer, Nonlinearity};
use cheapet_core::supervision::MdsaKey;
use cheapet_core::{
    ActivationVector, EvalOptions, LocalModel, MdsaModel, PredictionRecord, ProbabilityVector,
    SupervisorKind, fit_mdsa, mdsa_distance, predict_local, sweep_curve,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Gauss-Jordan inverse with partial pivoting.
fn gauss_jordan_inverse(a: &[f64], d: usize) -> Vec<f64> {
    let mut m = a.to_vec();
    let mut inv = vec![0.0; d * d];
    for i in 0..d {
        inv[i * d + i] = 1.0;
    }
    for col in 0..d {
        let pivot = (col..d)
            .max_by(|&x, &y| m[x * d + col].abs().total_cmp(&m[y * d + col].abs()))
            .unwrap();
        for k in 0..d {
            m.swap(col * d + k, pivot * d + k);
            inv.swap(col * d + k, pivot * d + k);
        }
        let p = m[col * d + col];
        for k in 0..d {
            m[col * d + k] /= p;
            inv[col * d + k] /= p;
        }
        for r in 0..d {
            if r != col {
                let f = m[r * d + col];
                for k in 0..d {
                    m[r * d + k] -= f * m[col * d + k];
                    inv[r * d + k] -= f * inv[col * d + k];
                }
            }
        }
    }
    inv
}

fn brute_distance(cov: &[f64], mean: &[f64], x: &[f64]) -> f64 {
    let d = mean.len();
    let inv = gauss_jordan_inverse(cov, d);
    let diff: Vec<f64> = x.iter().zip(mean).map(|(a, b)| a - b).collect();
    let mut s = 0.0;
    for i in 0..d {
        for j in 0..d {
            s += diff[i] * inv[i * d + j] * diff[j];
        }
    }
    s.sqrt()
}

/// Random SPD matrix `Q Λ Qᵀ` with eigenvalues log-uniform in `[1, cond]`.
fn random_spd(rng: &mut ChaCha8Rng, d: usize, cond: f64) -> Vec<f64> {
    let mut q: Vec<Vec<f64>> = Vec::new();
    while q.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        for u in &q {
            let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-6 {
            q.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    let eig: Vec<f64> = (0..d)
        .map(|i| match i {
            0 => 1.0,
            1 => cond,
            _ => cond.powf(rng.random::<f64>()),
        })
        .collect();
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            m[i * d + j] = (0..d).map(|k| q[k][i] * eig[k] * q[k][j]).sum();
        }
    }
    for i in 0..d {
        for j in 0..i {
            let s = (m[i * d + j] + m[j * d + i]) / 2.0;
            m[i * d + j] = s;
            m[j * d + i] = s;
        }
    }
    m
}

#[test]
fn cholesky_distance_matches_explicit_inverse() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..300 {
        let d = rng.random_range(1..=5);
        let cond = 10f64.powf(rng.random::<f64>() * 6.0);
        let cov = random_spd(&mut rng, d, cond);
        let mean: Vec<f64> = (0..d).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        let x: Vec<f64> = (0..d).map(|_| rng.random::<f64>() * 10.0 - 5.0).collect();
        let model = MdsaModel::from_moments(mean.clone(), &cov, 0.0).unwrap();
        let got = mdsa_distance(&model, &ActivationVector::new(x.clone()).unwrap(), 0).unwrap();
        let want = brute_distance(&cov, &mean, &x);
        assert!(
            (got - want).abs() <= 1e-8 * want.max(1e-300),
            "d={d} got {got} want {want}"
        );
    }
}

#[test]
fn fitted_covariance_matches_hand_computation() {
    // Sample covariance with the n − 1 denominator, computed naively.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rows: Vec<Vec<f64>> = (0..20)
        .map(|_| (0..3).map(|_| rng.random::<f64>()).collect())
        .collect();
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..3)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n)
        .collect();
    let mut cov = vec![0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            cov[i * 3 + j] = rows
                .iter()
                .map(|r| (r[i] - mean[i]) * (r[j] - mean[j]))
                .sum::<f64>()
                / (n - 1.0);
        }
    }
    let acts: Vec<_> = rows
        .iter()
        .map(|r| ActivationVector::new(r.clone()).unwrap())
        .collect();
    let model = fit_mdsa(&acts, &[], false, 0.0).unwrap();
    let stats = model.stats(MdsaKey::Global).unwrap();
    let expected_precision = gauss_jordan_inverse(&cov, 3);
    for (a, b) in stats.mean.iter().zip(&mean) {
        assert!((a - b).abs() < 1e-14);
    }
    for (a, b) in stats.precision.iter().zip(&expected_precision) {
        assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "{a} vs {b}");
    }
}

/// Straightforward forward pass written independently of the library.
#[allow(clippy::needless_range_loop)]
fn naive_forward(model: &LocalModel, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut cur = x.to_vec();
    let mut tap = vec![];
    for (li, layer) in model.layers().iter().enumerate() {
        let mut next = vec![0.0; layer.w.len()];
        for o in 0..layer.w.len() {
            let mut s = layer.b[o];
            for i in 0..cur.len() {
                s += layer.w[o][i] * cur[i];
            }
            next[o] = match layer.nonlinearity {
                Nonlinearity::Relu => {
                    if s > 0.0 {
                        s
                    } else {
                        0.0
                    }
                }
                _ => s,
            };
        }
        if layer.nonlinearity == Nonlinearity::Softmax {
            let denom: f64 = next.iter().map(|v| v.exp()).sum();
            next = next.iter().map(|v| v.exp() / denom).collect();
        }
        if li == model.activation_tap() {
            tap = next.clone();
        }
        cur = next;
    }
    (cur, tap)
}

fn random_model(rng: &mut ChaCha8Rng, dims: &[usize]) -> LocalModel {
    let layers: Vec<Layer> = dims
        .windows(2)
        .enumerate()
        .map(|(i, w)| Layer {
            w: (0..w[1])
                .map(|_| (0..w[0]).map(|_| rng.random::<f64>() - 0.5).collect())
                .collect(),
            b: (0..w[1]).map(|_| rng.random::<f64>() - 0.5).collect(),
            nonlinearity: if i + 2 == dims.len() {
                Nonlinearity::Softmax
            } else {
                Nonlinearity::Relu
            },
        })
        .collect();
    LocalModel::new(dims[0], *dims.last().unwrap(), 0, layers).unwrap()
}

#[test]
fn forward_pass_matches_naive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let model = random_model(&mut rng, &[4, 6, 3]);
        let x: Vec<f64> = (0..4).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        let (probs, tap) = predict_local(&model, &x).unwrap();
        let (want_p, want_tap) = naive_forward(&model, &x);
        let sum: f64 = probs.values().iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
        for (a, b) in probs.values().iter().zip(&want_p) {
            assert!((a - b).abs() < 1e-10);
        }
        for (a, b) in tap.values().iter().zip(&want_tap) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn softmax_shift_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let model = random_model(&mut rng, &[3, 5, 4]);
    let mut layers = model.layers().to_vec();
    layers
        .last_mut()
        .unwrap()
        .b
        .iter_mut()
        .for_each(|b| *b += 37.5);
    let shifted = LocalModel::new(3, 4, 0, layers).unwrap();
    for _ in 0..20 {
        let x: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
        let (p, _) = predict_local(&model, &x).unwrap();
        let (q, _) = predict_local(&shifted, &x).unwrap();
        for (a, b) in p.values().iter().zip(q.values()) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

fn rec(i: usize, local: usize, remote: usize, truth: usize) -> PredictionRecord {
    let mut p = vec![0.3, 0.3];
    p[local] = 0.7;
    PredictionRecord::new(format!("r{i}"), ProbabilityVector::new(p).unwrap(), None)
        .with_labels(truth, remote, 1.0)
}

/// Accuracy when exactly the records in `forwarded` go to the remote model.
fn evaluate_assignment(trace: &[PredictionRecord], forwarded: &[bool]) -> usize {
    trace
        .iter()
        .zip(forwarded)
        .filter(|(r, f)| {
            let label = if **f {
                r.remote_label.unwrap()
            } else {
                r.local_label
            };
            Some(label) == r.true_label
        })
        .count()
}

#[test]
fn sweep_equals_threshold_consistent_assignments() {
    // Enumerate all 2^N assignments, keep those forwarding a lowest-score
    // prefix, and compare with the curve.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..40 {
        let n = rng.random_range(1..=10usize);
        let trace: Vec<_> = (0..n)
            .map(|i| {
                rec(
                    i,
                    rng.random_range(0..2),
                    rng.random_range(0..2),
                    rng.random_range(0..2),
                )
            })
            .collect();
        let mut scores: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        for i in (1..n).rev() {
            scores.swap(i, rng.random_range(0..=i));
        }
        let report = sweep_curve(
            &trace,
            &scores,
            SupervisorKind::Sm,
            "t",
            EvalOptions::default(),
        )
        .unwrap();
        let mut consistent = Vec::new();
        for mask in 0u32..(1 << n) {
            let forwarded: Vec<bool> = (0..n).map(|i| mask & (1 << i) != 0).collect();
            let k = forwarded.iter().filter(|f| **f).count();
            let ok = (0..n)
                .all(|i| forwarded[i] == (scores.iter().filter(|&&s| s < scores[i]).count() < k));
            if ok {
                consistent.push((k, evaluate_assignment(&trace, &forwarded)));
            }
        }
        consistent.sort();
        assert_eq!(consistent.len(), n + 1);
        assert_eq!(report.curve.len(), n + 1);
        for (p, (k, correct)) in report.curve.iter().zip(consistent) {
            assert_eq!(p.n_remote, k);
            assert_eq!(p.system_accuracy, correct as f64 / n as f64);
        }
    }
}
