//! Seeded synthetic traces for tests, demos and simulations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::supervision::{ActivationVector, ProbabilityVector};
use crate::trace::PredictionRecord;

/// Parameters of a binary-classification trace whose local model is
/// calibrated: a record with softmax confidence `c` is locally correct with
/// probability `c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceParams {
    pub n: usize,
    /// Probability that the remote model answers correctly.
    pub remote_accuracy: f64,
    /// Lower bound of the sampled local confidence, in [0.5, 1).
    pub min_confidence: f64,
    /// Probability that the remote model is right where the local model is
    /// wrong, overriding `remote_accuracy` on those records.
    pub complementarity: Option<f64>,
    pub cost_units: f64,
    pub seed: u64,
}

impl Default for TraceParams {
    fn default() -> Self {
        Self {
            n: 200,
            remote_accuracy: 0.85,
            min_confidence: 0.5,
            complementarity: None,
            cost_units: 1.0,
            seed: 0,
        }
    }
}

/// Generates a trace and its softmax confidences.
pub fn calibrated_trace(params: &TraceParams) -> Vec<PredictionRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let lo = params.min_confidence.clamp(0.5, 1.0);
    (0..params.n)
        .map(|i| {
            let confidence = lo + (1.0 - lo) * rng.random::<f64>();
            let truth = rng.random_range(0..2usize);
            let local_correct = rng.random::<f64>() < confidence;
            let local = if local_correct { truth } else { 1 - truth };
            let remote_correct = match params.complementarity {
                Some(c) if !local_correct => rng.random::<f64>() < c,
                _ => rng.random::<f64>() < params.remote_accuracy,
            };
            let remote = if remote_correct { truth } else { 1 - truth };
            let mut probs = [1.0 - confidence, 1.0 - confidence];
            probs[local] = confidence;
            let activation = vec![
                if local == 0 { -1.0 } else { 1.0 } * confidence + 0.1 * rng.random::<f64>(),
                (1.0 - confidence) * rng.random::<f64>(),
            ];
            PredictionRecord::new(
                format!("syn-{i}"),
                ProbabilityVector::new(probs.to_vec()).expect("valid simplex"),
                Some(ActivationVector::new(activation).expect("finite activation")),
            )
            .with_labels(truth, remote, params.cost_units)
        })
        .collect()
}

/// Softmax confidences of a trace, the SM trust scores.
pub fn softmax_scores(trace: &[PredictionRecord]) -> Vec<f64> {
    trace.iter().map(|r| r.local_probs.max()).collect()
}

/// A trace of `n` records (n ≥ 2) where the local model is correct exactly on
/// the high-score half and the remote model exactly on the low-score half.
///
/// Both models alone are at most about half right, but trusting the local
/// model above the median and forwarding below it is always right.
pub fn complementary_trace(n: usize) -> (Vec<PredictionRecord>, Vec<f64>) {
    let half = n / 2;
    let mut trace = Vec::with_capacity(n);
    let mut scores = Vec::with_capacity(n);
    for i in 0..n {
        let score = 0.5 + 0.5 * (i as f64 + 0.5) / n as f64;
        let truth = i % 2;
        let high = i >= half;
        let local = if high { truth } else { 1 - truth };
        let remote = if high { 1 - truth } else { truth };
        let mut probs = vec![1.0 - score, 1.0 - score];
        probs[local] = score;
        trace.push(
            PredictionRecord::new(
                format!("comp-{i}"),
                ProbabilityVector::new(probs).expect("valid simplex"),
                None,
            )
            .with_labels(truth, remote, 1.0),
        );
        scores.push(score);
    }
    (trace, scores)
}
