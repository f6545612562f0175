//! Local-vs-remote decisions, threshold calibration and online adaptation.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::supervision::SupervisorKind;

pub const DEFAULT_EMA_ALPHA: f64 = 0.02;
pub const DEFAULT_STEP_GAIN: f64 = 0.5;
/// Decisions observed before the adapter starts moving the threshold.
pub const COLD_START_DECISIONS: u64 = 50;
/// Number of recent scores used for the interquartile-range step scale.
pub const SCORE_WINDOW: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    Local,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingPolicy {
    pub supervisor_kind: SupervisorKind,
    pub threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_forward_fraction: Option<f64>,
}

impl RoutingPolicy {
    pub fn new(supervisor_kind: SupervisorKind, threshold: f64) -> Result<Self> {
        let policy = Self {
            supervisor_kind,
            threshold,
            target_forward_fraction: None,
        };
        policy.validate()?;
        Ok(policy)
    }

    pub fn with_target(mut self, target: f64) -> Result<Self> {
        self.target_forward_fraction = Some(target);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.threshold.is_finite() {
            return Err(Error::validation(format!(
                "threshold {} is not finite",
                self.threshold
            )));
        }
        if let Some(t) = self.target_forward_fraction {
            check_target(t)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoutingDecision {
    pub trusted: bool,
    pub trust_score: f64,
    pub threshold_used: f64,
    pub route: Route,
}

/// Trusts the local prediction iff `score >= threshold`.
pub fn decide(score: f64, policy: &RoutingPolicy) -> Result<RoutingDecision> {
    if !score.is_finite() {
        return Err(Error::validation(format!(
            "trust score {score} is not finite"
        )));
    }
    if !policy.threshold.is_finite() {
        return Err(Error::validation(format!(
            "threshold {} is not finite",
            policy.threshold
        )));
    }
    let trusted = score >= policy.threshold;
    Ok(RoutingDecision {
        trusted,
        trust_score: score,
        threshold_used: policy.threshold,
        route: if trusted { Route::Local } else { Route::Remote },
    })
}

fn check_target(target: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&target) {
        return Err(Error::validation(format!(
            "target forward fraction {target} is outside [0, 1]"
        )));
    }
    Ok(())
}

/// Fraction of `scores` strictly below `threshold`.
pub fn forward_fraction(scores: &[f64], threshold: f64) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    scores.iter().filter(|&&s| s < threshold).count() as f64 / scores.len() as f64
}

/// Outcome of calibrating a threshold on a score sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub threshold: f64,
    pub target_forward_fraction: f64,
    pub achieved_forward_fraction: f64,
    pub forwarded: usize,
    pub n: usize,
}

/// Number of forwarded samples aimed for: `ceil(target · n)`, ignoring
/// rounding noise in the product.
fn target_count(target: f64, n: usize) -> usize {
    let raw = target * n as f64;
    let k = if (raw - raw.round()).abs() < 1e-9 {
        raw.round()
    } else {
        raw.ceil()
    };
    (k as usize).min(n)
}

/// Picks the threshold whose forwarded set is the `ceil(target · N)` lowest
/// scores.
///
/// With tied scores that count may be unreachable; the largest reachable
/// count not above it is used instead and reported in the result.
pub fn calibrate_threshold(scores: &[f64], target_forward_fraction: f64) -> Result<Calibration> {
    if scores.is_empty() {
        return Err(Error::validation("cannot calibrate on an empty score set"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::validation("scores contain NaN"));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::validation(format!("score {s} is not finite")));
    }
    check_target(target_forward_fraction)?;

    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let wanted = target_count(target_forward_fraction, n);

    // Reachable forward counts are the positions where the sorted value
    // changes, plus the two ends.
    let forwarded = (0..=wanted)
        .rev()
        .find(|&k| k == 0 || k == n || sorted[k - 1] < sorted[k])
        .unwrap_or(0);

    let threshold = if forwarded == 0 {
        below(sorted[0])
    } else if forwarded == n {
        sorted[n - 1].next_up()
    } else {
        sorted[forwarded]
    };

    Ok(Calibration {
        threshold,
        target_forward_fraction,
        achieved_forward_fraction: forwarded as f64 / n as f64,
        forwarded,
        n,
    })
}

/// A finite value strictly below `x`.
fn below(x: f64) -> f64 {
    let t = x - 1.0;
    if t < x { t } else { x.next_down() }
}

/// Controller state for online threshold adaptation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationState {
    pub ema_forward_rate: f64,
    pub ema_alpha: f64,
    pub step_gain: f64,
    pub decisions_seen: u64,
    #[serde(default)]
    recent_scores: VecDeque<f64>,
}

impl AdaptationState {
    /// Starts the EMA at `initial_rate`, typically the target itself.
    pub fn new(initial_rate: f64, ema_alpha: f64, step_gain: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&initial_rate) {
            return Err(Error::validation(format!(
                "initial forward rate {initial_rate} is outside [0, 1]"
            )));
        }
        if !(ema_alpha > 0.0 && ema_alpha <= 1.0) {
            return Err(Error::validation(format!(
                "ema_alpha {ema_alpha} must be in (0, 1]"
            )));
        }
        if !(step_gain > 0.0 && step_gain.is_finite()) {
            return Err(Error::validation(format!(
                "step_gain {step_gain} must be positive"
            )));
        }
        Ok(Self {
            ema_forward_rate: initial_rate,
            ema_alpha,
            step_gain,
            decisions_seen: 0,
            recent_scores: VecDeque::with_capacity(SCORE_WINDOW),
        })
    }

    pub fn with_defaults(target: f64) -> Result<Self> {
        Self::new(target, DEFAULT_EMA_ALPHA, DEFAULT_STEP_GAIN)
    }

    /// Interquartile range of recent scores, falling back to their range and
    /// then to 1 when the window is degenerate.
    pub fn score_scale(&self) -> f64 {
        if self.recent_scores.len() < 2 {
            return 1.0;
        }
        let mut sorted: Vec<f64> = self.recent_scores.iter().copied().collect();
        sorted.sort_by(f64::total_cmp);
        let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
        if iqr > 0.0 {
            return iqr;
        }
        let range = sorted[sorted.len() - 1] - sorted[0];
        if range > 0.0 { range } else { 1.0 }
    }
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// One controller step: update the forward-rate EMA and nudge the threshold
/// against the error `ema − target`, scaled by the recent score IQR.
///
/// Forwarding too often lowers the threshold; forwarding too rarely raises
/// it. The threshold is held fixed for the first [`COLD_START_DECISIONS`].
pub fn adapt(
    state: &AdaptationState,
    policy: &RoutingPolicy,
    decision: &RoutingDecision,
) -> Result<(AdaptationState, RoutingPolicy)> {
    let target = policy
        .target_forward_fraction
        .ok_or_else(|| Error::Config("adaptation requires a target forward fraction".into()))?;
    let mut next = state.clone();
    let forwarded = if decision.route == Route::Remote {
        1.0
    } else {
        0.0
    };
    next.ema_forward_rate = ((1.0 - next.ema_alpha) * next.ema_forward_rate
        + next.ema_alpha * forwarded)
        .clamp(0.0, 1.0);
    if next.recent_scores.len() == SCORE_WINDOW {
        next.recent_scores.pop_front();
    }
    next.recent_scores.push_back(decision.trust_score);
    next.decisions_seen += 1;

    let mut policy = policy.clone();
    if state.decisions_seen >= COLD_START_DECISIONS {
        let step = next.step_gain * (next.ema_forward_rate - target) * next.score_scale();
        policy.threshold -= step;
    }
    Ok((next, policy))
}
