//! System accuracy and cost-accuracy curves over labeled traces.
//!
//! A record is answered locally when its trust score is at least the
//! threshold and by the remote model otherwise. Sweeping the threshold over
//! every distinct routing partition yields the cost-accuracy curve.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::supervision::{ClassId, SupervisorKind};
use crate::trace::PredictionRecord;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalOptions {
    /// Weight cost saving by `remote_cost_units` instead of request counts.
    pub cost_weighted: bool,
    /// Allow records without `remote_label`; forwarding one counts as wrong.
    pub allow_missing_remote: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub forward_fraction: f64,
    pub system_accuracy: f64,
    pub cost_saving: f64,
    pub threshold: f64,
    pub n_local: usize,
    pub n_remote: usize,
}

/// Accuracy, forward fraction and cost saving at a single threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemOutcome {
    pub accuracy: f64,
    pub forward_fraction: f64,
    pub cost_saving: f64,
    pub threshold: f64,
    pub n_local: usize,
    pub n_remote: usize,
}

/// Per-record facts needed for routing evaluation.
struct Prepared {
    local_correct: bool,
    remote_correct: bool,
    cost: f64,
}

fn prepare(trace: &[PredictionRecord], scores: &[f64], opts: EvalOptions) -> Result<Vec<Prepared>> {
    if trace.is_empty() {
        return Err(Error::validation("trace is empty"));
    }
    if trace.len() != scores.len() {
        return Err(Error::validation(format!(
            "{} scores for {} records",
            scores.len(),
            trace.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::validation(format!(
            "score for record {} is not finite",
            trace[i].id
        )));
    }
    trace
        .iter()
        .map(|r| {
            let truth: ClassId = r
                .true_label
                .ok_or_else(|| Error::validation(format!("record {} has no true_label", r.id)))?;
            let remote = match r.remote_label {
                Some(l) => Some(l),
                None if opts.allow_missing_remote => None,
                None => {
                    return Err(Error::validation(format!(
                        "record {} has no remote_label",
                        r.id
                    )));
                }
            };
            let cost = if opts.cost_weighted {
                match (remote, r.remote_cost_units) {
                    (Some(_), Some(c)) => c,
                    (None, _) => 0.0,
                    (Some(_), None) => {
                        return Err(Error::validation(format!(
                            "record {} has no remote_cost_units",
                            r.id
                        )));
                    }
                }
            } else {
                1.0
            };
            Ok(Prepared {
                local_correct: r.local_label == truth,
                remote_correct: remote == Some(truth),
                cost,
            })
        })
        .collect()
}

fn saving(
    forwarded_cost: f64,
    total_cost: f64,
    n_remote: usize,
    n: usize,
    opts: EvalOptions,
) -> f64 {
    if opts.cost_weighted && total_cost > 0.0 {
        1.0 - forwarded_cost / total_cost
    } else {
        1.0 - n_remote as f64 / n as f64
    }
}

/// Evaluates the combined system at one threshold.
pub fn system_accuracy(
    trace: &[PredictionRecord],
    scores: &[f64],
    threshold: f64,
    opts: EvalOptions,
) -> Result<SystemOutcome> {
    let prepared = prepare(trace, scores, opts)?;
    let n = prepared.len();
    let mut correct = 0usize;
    let mut n_remote = 0usize;
    let mut forwarded_cost = 0.0;
    let mut total_cost = 0.0;
    for (p, &s) in prepared.iter().zip(scores) {
        total_cost += p.cost;
        if s >= threshold {
            correct += p.local_correct as usize;
        } else {
            n_remote += 1;
            forwarded_cost += p.cost;
            correct += p.remote_correct as usize;
        }
    }
    Ok(SystemOutcome {
        accuracy: correct as f64 / n as f64,
        forward_fraction: n_remote as f64 / n as f64,
        cost_saving: saving(forwarded_cost, total_cost, n_remote, n, opts),
        threshold,
        n_local: n - n_remote,
        n_remote,
    })
}

/// Curve plus the summary values read off it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub trace_id: String,
    pub supervisor_kind: SupervisorKind,
    pub local_only_accuracy: f64,
    pub remote_only_accuracy: f64,
    /// Smallest forward fraction whose accuracy reaches remote-only accuracy.
    pub min_fraction_matching_remote: Option<CurvePoint>,
    /// Highest-accuracy point; the smallest forward fraction wins ties.
    pub best_point: CurvePoint,
    pub curve: Vec<CurvePoint>,
}

impl EvaluationReport {
    /// Derives the summary fields from a curve ordered by forward fraction.
    pub fn from_curve(
        curve: Vec<CurvePoint>,
        supervisor_kind: SupervisorKind,
        trace_id: impl Into<String>,
    ) -> Result<Self> {
        if curve.len() < 2 {
            return Err(Error::validation(format!(
                "a curve needs at least 2 points, got {}",
                curve.len()
            )));
        }
        let first = curve[0];
        let last = curve[curve.len() - 1];
        if first.n_remote != 0 || last.n_local != 0 {
            return Err(Error::validation(
                "curve must start with nothing forwarded and end with everything forwarded",
            ));
        }
        if curve
            .windows(2)
            .any(|w| w[0].forward_fraction > w[1].forward_fraction)
        {
            return Err(Error::validation(
                "curve is not ordered by forward_fraction",
            ));
        }
        let remote_only = last.system_accuracy;
        let min_fraction_matching_remote = curve
            .iter()
            .copied()
            .find(|p| p.system_accuracy >= remote_only);
        let best_point = curve
            .iter()
            .copied()
            .reduce(|best, p| {
                if p.system_accuracy > best.system_accuracy {
                    p
                } else {
                    best
                }
            })
            .expect("non-empty curve");
        Ok(Self {
            trace_id: trace_id.into(),
            supervisor_kind,
            local_only_accuracy: first.system_accuracy,
            remote_only_accuracy: remote_only,
            min_fraction_matching_remote,
            best_point,
            curve,
        })
    }
}

/// Thresholds separating consecutive distinct sorted scores: one below the
/// minimum, midpoints between neighbours, one above the maximum.
fn partition_threshold(lower: f64, upper: f64) -> f64 {
    let mid = lower + (upper - lower) / 2.0;
    if mid > lower && mid <= upper {
        mid
    } else {
        upper
    }
}

fn below(x: f64) -> f64 {
    let t = x - 1.0;
    if t < x { t } else { x.next_down() }
}

fn above(x: f64) -> f64 {
    let t = x + 1.0;
    if t > x { t } else { x.next_up() }
}

/// Evaluates every distinct routing partition of the trace.
///
/// Records are forwarded in ascending score order; tied scores move
/// together, so the curve has one point per distinct score plus one.
pub fn sweep_curve(
    trace: &[PredictionRecord],
    scores: &[f64],
    supervisor_kind: SupervisorKind,
    trace_id: &str,
    opts: EvalOptions,
) -> Result<EvaluationReport> {
    let prepared = prepare(trace, scores, opts)?;
    let n = prepared.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));

    let mut correct: usize = prepared.iter().filter(|p| p.local_correct).count();
    // Sum costs in the same order they are later accumulated, so the last
    // point's saving is exactly zero.
    let total_cost: f64 = order.iter().map(|&i| prepared[i].cost).sum();
    let mut forwarded_cost = 0.0;
    let mut n_remote = 0usize;

    let point = |correct: usize, n_remote: usize, forwarded_cost: f64, threshold: f64| CurvePoint {
        forward_fraction: n_remote as f64 / n as f64,
        system_accuracy: correct as f64 / n as f64,
        cost_saving: saving(forwarded_cost, total_cost, n_remote, n, opts),
        threshold,
        n_local: n - n_remote,
        n_remote,
    };

    let mut curve = Vec::with_capacity(n + 1);
    curve.push(point(correct, 0, 0.0, below(scores[order[0]])));
    let mut i = 0;
    while i < n {
        let value = scores[order[i]];
        while i < n && scores[order[i]] == value {
            let p = &prepared[order[i]];
            correct = correct + p.remote_correct as usize - p.local_correct as usize;
            forwarded_cost += p.cost;
            n_remote += 1;
            i += 1;
        }
        let threshold = if i < n {
            partition_threshold(value, scores[order[i]])
        } else {
            above(value)
        };
        curve.push(point(correct, n_remote, forwarded_cost, threshold));
    }
    EvaluationReport::from_curve(curve, supervisor_kind, trace_id)
}

/// Curve output formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Jsonl,
}

pub const CSV_HEADER: &str =
    "forward_fraction,system_accuracy,cost_saving,threshold,n_local,n_remote";

pub fn emit_report<W: Write>(
    report: &EvaluationReport,
    format: ReportFormat,
    mut w: W,
) -> std::io::Result<()> {
    match format {
        ReportFormat::Csv => {
            writeln!(w, "{CSV_HEADER}")?;
            for p in &report.curve {
                writeln!(
                    w,
                    "{:.6},{:.6},{:.6},{:.6},{},{}",
                    p.forward_fraction,
                    p.system_accuracy,
                    p.cost_saving,
                    p.threshold,
                    p.n_local,
                    p.n_remote
                )?;
            }
        }
        ReportFormat::Jsonl => {
            for p in &report.curve {
                serde_json::to_writer(&mut w, p)?;
                w.write_all(b"\n")?;
            }
        }
    }
    w.flush()
}

/// Reads curve points written by [`emit_report`] in JSONL form.
pub fn read_curve_jsonl<R: BufRead>(r: R) -> Result<Vec<CurvePoint>> {
    let mut curve = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        curve.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(curve)
}
