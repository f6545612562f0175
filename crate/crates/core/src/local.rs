//! Built-in feed-forward surrogate model.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::supervision::{ActivationVector, ProbabilityVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Nonlinearity {
    Relu,
    Identity,
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// Row-major, `out × in`.
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub nonlinearity: Nonlinearity,
}

impl Layer {
    pub fn input_dim(&self) -> usize {
        self.w.first().map_or(0, Vec::len)
    }

    pub fn output_dim(&self) -> usize {
        self.w.len()
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = self
            .w
            .iter()
            .zip(&self.b)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect();
        match self.nonlinearity {
            Nonlinearity::Identity => {}
            Nonlinearity::Relu => out.iter_mut().for_each(|v| *v = v.max(0.0)),
            Nonlinearity::Softmax => softmax_in_place(&mut out),
        }
        out
    }
}

/// Numerically stable softmax (max subtraction).
pub fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in logits.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in logits.iter_mut() {
        *v /= sum;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LocalModelRepr", into = "LocalModelRepr")]
pub struct LocalModel {
    input_dim: usize,
    num_classes: usize,
    activation_tap: usize,
    layers: Vec<Layer>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LocalModelRepr {
    input_dim: usize,
    num_classes: usize,
    activation_tap: usize,
    layers: Vec<Layer>,
}

impl TryFrom<LocalModelRepr> for LocalModel {
    type Error = Error;

    fn try_from(r: LocalModelRepr) -> Result<Self> {
        LocalModel::new(r.input_dim, r.num_classes, r.activation_tap, r.layers)
    }
}

impl From<LocalModel> for LocalModelRepr {
    fn from(m: LocalModel) -> Self {
        Self {
            input_dim: m.input_dim,
            num_classes: m.num_classes,
            activation_tap: m.activation_tap,
            layers: m.layers,
        }
    }
}

impl LocalModel {
    pub fn new(
        input_dim: usize,
        num_classes: usize,
        activation_tap: usize,
        layers: Vec<Layer>,
    ) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::validation("input_dim must be positive"));
        }
        if num_classes < 2 {
            return Err(Error::validation(format!(
                "num_classes must be at least 2, got {num_classes}"
            )));
        }
        let Some(last) = layers.last() else {
            return Err(Error::validation("model has no layers"));
        };
        for (i, layer) in layers.iter().enumerate() {
            if layer.w.is_empty() {
                return Err(Error::validation(format!(
                    "layer {i} has an empty weight matrix"
                )));
            }
            let cols = layer.input_dim();
            if let Some(r) = layer.w.iter().position(|row| row.len() != cols) {
                return Err(Error::validation(format!(
                    "layer {i} weight row {r} has {} columns, expected {cols}",
                    layer.w[r].len()
                )));
            }
            if layer.b.len() != layer.output_dim() {
                return Err(Error::validation(format!(
                    "layer {i} bias has {} entries, expected {}",
                    layer.b.len(),
                    layer.output_dim()
                )));
            }
            if layer
                .w
                .iter()
                .flatten()
                .chain(&layer.b)
                .any(|v| !v.is_finite())
            {
                return Err(Error::validation(format!(
                    "layer {i} has non-finite parameters"
                )));
            }
        }
        if layers[0].input_dim() != input_dim {
            return Err(Error::validation(format!(
                "layer 0 expects input dimension {}, model declares input_dim {input_dim}",
                layers[0].input_dim()
            )));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::validation(format!(
                    "layer {i} outputs {} values but layer {} expects {}",
                    pair[0].output_dim(),
                    i + 1,
                    pair[1].input_dim()
                )));
            }
        }
        if last.nonlinearity != Nonlinearity::Softmax {
            return Err(Error::validation(
                "final layer nonlinearity must be softmax",
            ));
        }
        if last.output_dim() != num_classes {
            return Err(Error::validation(format!(
                "final layer outputs {} values, expected num_classes {num_classes}",
                last.output_dim()
            )));
        }
        if activation_tap + 1 >= layers.len() {
            return Err(Error::validation(format!(
                "activation_tap {activation_tap} must precede the final softmax layer {}",
                layers.len() - 1
            )));
        }
        Ok(Self {
            input_dim,
            num_classes,
            activation_tap,
            layers,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn activation_tap(&self) -> usize {
        self.activation_tap
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Dimension of the exported activation vector.
    pub fn tap_dim(&self) -> usize {
        self.layers[self.activation_tap].output_dim()
    }
}

/// Loads and validates a JSON weight file.
pub fn load_weights(path: impl AsRef<Path>) -> Result<LocalModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_weights(&text)
}

pub fn parse_weights(text: &str) -> Result<LocalModel> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        message: format!("column {}: {e}", e.column()),
    })
}

/// Forward pass returning the softmax output and the tap-layer activations.
pub fn predict_local(
    model: &LocalModel,
    features: &[f64],
) -> Result<(ProbabilityVector, ActivationVector)> {
    if features.len() != model.input_dim {
        return Err(Error::validation(format!(
            "input has dimension {}, model expects {}",
            features.len(),
            model.input_dim
        )));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("input contains non-finite values"));
    }
    let mut x = features.to_vec();
    let mut tap = Vec::new();
    for (i, layer) in model.layers.iter().enumerate() {
        x = layer.forward(&x);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric { layer: i });
        }
        if i == model.activation_tap {
            tap = x.clone();
        }
    }
    let probs = ProbabilityVector::new(x)?;
    let activation = ActivationVector::new(tap)?;
    Ok((probs, activation))
}
