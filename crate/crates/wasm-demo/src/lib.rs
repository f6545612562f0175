//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Each exported function has a plain-Rust counterpart returning
//! `Result<_, String>` so the logic is testable without a browser.

use cheapet_core::routing::forward_fraction;
use cheapet_core::synthetic::{TraceParams, calibrated_trace, softmax_scores};
use cheapet_core::{
    ActivationVector, EvalOptions, SupervisorKind, calibrate_threshold, fit_mdsa, mdsa_distance,
    sweep_curve,
};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct SweepResult {
    pub report: cheapet_core::EvaluationReport,
    pub scores: Vec<f64>,
}

/// Sweeps a synthetic trace with softmax supervision.
pub fn sweep(
    n: usize,
    remote_accuracy: f64,
    complementarity: Option<f64>,
    seed: u64,
) -> Result<SweepResult, String> {
    if n == 0 || n > 100_000 {
        return Err(format!("trace size {n} must be in 1..=100000"));
    }
    for (name, v) in [
        ("remote accuracy", Some(remote_accuracy)),
        ("complementarity", complementarity),
    ] {
        if let Some(v) = v
            && !(0.0..=1.0).contains(&v)
        {
            return Err(format!("{name} {v} is outside [0, 1]"));
        }
    }
    let trace = calibrated_trace(&TraceParams {
        n,
        remote_accuracy,
        complementarity,
        seed,
        ..Default::default()
    });
    let scores = softmax_scores(&trace);
    let report = sweep_curve(
        &trace,
        &scores,
        SupervisorKind::Sm,
        "synthetic",
        EvalOptions::default(),
    )
    .map_err(|e| e.to_string())?;
    Ok(SweepResult { report, scores })
}

#[derive(Debug, Serialize, PartialEq)]
pub struct CalibrationResult {
    pub threshold: f64,
    pub target_forward_fraction: f64,
    pub achieved_forward_fraction: f64,
    pub forwarded: usize,
    pub n: usize,
}

/// Threshold forwarding `target` of `scores`, re-checked by counting.
pub fn calibrate(scores: &[f64], target: f64) -> Result<CalibrationResult, String> {
    let c = calibrate_threshold(scores, target).map_err(|e| e.to_string())?;
    debug_assert_eq!(
        forward_fraction(scores, c.threshold),
        c.achieved_forward_fraction
    );
    Ok(CalibrationResult {
        threshold: c.threshold,
        target_forward_fraction: c.target_forward_fraction,
        achieved_forward_fraction: c.achieved_forward_fraction,
        forwarded: c.forwarded,
        n: c.n,
    })
}

/// Fits a global MDSA model on 2-d `points` (flattened `x, y` pairs) and
/// returns distances on a `width × height` grid over `[x0, x1] × [y0, y1]`,
/// row-major from the top row (`y1`) down.
#[allow(clippy::too_many_arguments)]
pub fn mdsa_field(
    points: &[f64],
    lambda_scale: f64,
    width: usize,
    height: usize,
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
) -> Result<Vec<f64>, String> {
    if !points.len().is_multiple_of(2) {
        return Err("points must be flattened (x, y) pairs".into());
    }
    if width < 2 || height < 2 || width * height > 1 << 20 {
        return Err(format!("grid {width}×{height} is not in 2..=1M cells"));
    }
    let acts = points
        .chunks(2)
        .map(|p| ActivationVector::new(p.to_vec()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let model = fit_mdsa(&acts, &[], false, lambda_scale).map_err(|e| e.to_string())?;
    let mut out = Vec::with_capacity(width * height);
    for row in 0..height {
        let y = y1 - (y1 - y0) * row as f64 / (height - 1) as f64;
        for col in 0..width {
            let x = x0 + (x1 - x0) * col as f64 / (width - 1) as f64;
            let v = ActivationVector::new(vec![x, y]).map_err(|e| e.to_string())?;
            out.push(mdsa_distance(&model, &v, 0).map_err(|e| e.to_string())?);
        }
    }
    Ok(out)
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
        .map_err(|e| JsError::new(&e))
}

/// JSON `{report, scores}`; a negative `complementarity` means none.
#[wasm_bindgen(js_name = sweepSynthetic)]
pub fn sweep_synthetic(
    n: usize,
    remote_accuracy: f64,
    complementarity: f64,
    seed: u32,
) -> Result<String, JsError> {
    let comp = (complementarity >= 0.0).then_some(complementarity);
    to_js(sweep(n, remote_accuracy, comp, u64::from(seed)))
}

#[wasm_bindgen(js_name = calibrateScores)]
pub fn calibrate_scores(scores: Vec<f64>, target: f64) -> Result<String, JsError> {
    to_js(calibrate(&scores, target))
}

#[wasm_bindgen(js_name = mdsaField)]
#[allow(clippy::too_many_arguments)]
pub fn mdsa_field_js(
    points: Vec<f64>,
    lambda_scale: f64,
    width: usize,
    height: usize,
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
) -> Result<Vec<f64>, JsError> {
    mdsa_field(&points, lambda_scale, width, height, x0, x1, y0, y1).map_err(|e| JsError::new(&e))
}
