//! JSONL prediction traces.
//!
//! One JSON object per line: `id`, `local_probs`, optional `activation`,
//! `true_label`, `remote_label`, `remote_cost_units` (required alongside
//! `remote_label`) and `features`. A stored `local_label` is checked against
//! the argmax of `local_probs`. Unknown fields are kept and written back.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::supervision::{ActivationVector, ClassId, ProbabilityVector};

/// One input's local outputs, labels and remote outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub id: String,
    pub features: Option<Vec<f64>>,
    pub local_probs: ProbabilityVector,
    pub activation: Option<ActivationVector>,
    pub local_label: ClassId,
    pub true_label: Option<ClassId>,
    pub remote_label: Option<ClassId>,
    pub remote_cost_units: Option<f64>,
    pub extra: Map<String, Value>,
}

impl PredictionRecord {
    pub fn new(
        id: impl Into<String>,
        local_probs: ProbabilityVector,
        activation: Option<ActivationVector>,
    ) -> Self {
        let local_label = local_probs.argmax();
        Self {
            id: id.into(),
            features: None,
            local_probs,
            activation,
            local_label,
            true_label: None,
            remote_label: None,
            remote_cost_units: None,
            extra: Map::new(),
        }
    }

    pub fn with_labels(mut self, true_label: ClassId, remote_label: ClassId, cost: f64) -> Self {
        self.true_label = Some(true_label);
        self.remote_label = Some(remote_label);
        self.remote_cost_units = Some(cost);
        self
    }

    fn from_raw(raw: RawRecord, mode: TraceMode) -> Result<Self> {
        let local_probs = ProbabilityVector::new(raw.local_probs)
            .map_err(|e| Error::validation(format!("record {}: {e}", raw.id)))?;
        let activation = raw
            .activation
            .map(ActivationVector::new)
            .transpose()
            .map_err(|e| Error::validation(format!("record {}: {e}", raw.id)))?;
        let argmax = local_probs.argmax();
        if let Some(stored) = raw.local_label
            && stored != argmax
            && mode == TraceMode::Strict
        {
            return Err(Error::validation(format!(
                "record {}: local_label {stored} does not match argmax {argmax} of local_probs",
                raw.id
            )));
        }
        if raw.remote_label.is_some() && raw.remote_cost_units.is_none() {
            return Err(Error::validation(format!(
                "record {}: remote_label present without remote_cost_units",
                raw.id
            )));
        }
        if let Some(c) = raw.remote_cost_units
            && !(c >= 0.0 && c.is_finite())
        {
            return Err(Error::validation(format!(
                "record {}: remote_cost_units {c} must be finite and >= 0",
                raw.id
            )));
        }
        if let Some(f) = &raw.features
            && f.iter().any(|v| !v.is_finite())
        {
            return Err(Error::validation(format!(
                "record {}: non-finite feature",
                raw.id
            )));
        }
        Ok(Self {
            id: raw.id,
            features: raw.features,
            local_probs,
            activation,
            local_label: argmax,
            true_label: raw.true_label,
            remote_label: raw.remote_label,
            remote_cost_units: raw.remote_cost_units,
            extra: raw.extra,
        })
    }

    fn to_raw(&self) -> RawRecord {
        RawRecord {
            id: self.id.clone(),
            local_probs: self.local_probs.values().to_vec(),
            activation: self.activation.as_ref().map(|a| a.values().to_vec()),
            local_label: None,
            true_label: self.true_label,
            remote_label: self.remote_label,
            remote_cost_units: self.remote_cost_units,
            features: self.features.clone(),
            extra: self.extra.clone(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RawRecord {
    id: String,
    local_probs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    activation: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    local_label: Option<ClassId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    true_label: Option<ClassId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    remote_label: Option<ClassId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    remote_cost_units: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    features: Option<Vec<f64>>,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

/// How strictly stored `local_label` values are checked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TraceMode {
    #[default]
    Strict,
    /// Replaces a mismatching `local_label` with the argmax instead of failing.
    Permissive,
}

/// Streaming reader yielding one record per non-blank line.
pub struct TraceReader<R> {
    lines: std::io::Lines<R>,
    line_no: usize,
    mode: TraceMode,
}

impl<R: BufRead> TraceReader<R> {
    pub fn new(reader: R, mode: TraceMode) -> Self {
        Self {
            lines: reader.lines(),
            line_no: 0,
            mode,
        }
    }
}

impl<R: BufRead> Iterator for TraceReader<R> {
    type Item = Result<PredictionRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = self.lines.next()?;
            self.line_no += 1;
            let line = match line {
                Ok(l) => l,
                Err(e) => {
                    return Some(Err(Error::Parse {
                        line: self.line_no,
                        message: e.to_string(),
                    }));
                }
            };
            if line.trim().is_empty() {
                continue;
            }
            let line_no = self.line_no;
            let parsed = serde_json::from_str::<RawRecord>(&line)
                .map_err(|e| Error::Parse {
                    line: line_no,
                    message: format!("column {}: {e}", e.column()),
                })
                .and_then(|raw| {
                    PredictionRecord::from_raw(raw, self.mode).map_err(|e| Error::Parse {
                        line: line_no,
                        message: e.to_string(),
                    })
                });
            return Some(parsed);
        }
    }
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<TraceReader<BufReader<File>>> {
    read_trace_with(path, TraceMode::Strict)
}

pub fn read_trace_with(
    path: impl AsRef<Path>,
    mode: TraceMode,
) -> Result<TraceReader<BufReader<File>>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(TraceReader::new(BufReader::new(file), mode))
}

/// Reads a whole trace into memory.
pub fn load_trace(path: impl AsRef<Path>, mode: TraceMode) -> Result<Vec<PredictionRecord>> {
    read_trace_with(path, mode)?.collect()
}

pub fn write_trace_to<W: Write>(mut w: W, records: &[PredictionRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, &r.to_raw())?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn write_trace(path: impl AsRef<Path>, records: &[PredictionRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_trace_to(BufWriter::new(file), records).map_err(|e| Error::io(path, e))
}
