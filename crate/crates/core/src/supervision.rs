//! Trust scores for local predictions.
//!
//! Two supervisors are provided: the maximum softmax probability (SM) and the
//! Mahalanobis distance of a tap-layer activation to the training activations
//! (MDSA). Both are normalized into a [`TrustScore`] where higher always means
//! more trustworthy, so routing compares every supervisor with one rule.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::trace::PredictionRecord;

pub type ClassId = usize;

/// Absolute tolerance on the probability simplex sum.
pub const PROB_SUM_TOLERANCE: f64 = 1e-6;

/// Default relative covariance shrinkage.
pub const DEFAULT_LAMBDA_SCALE: f64 = 1e-6;

/// Smallest regularization applied whenever `lambda_scale > 0`.
pub const LAMBDA_FLOOR: f64 = 1e-12;

const SYMMETRY_TOLERANCE: f64 = 1e-9;

/// Softmax output of the local surrogate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::validation(format!(
                "probability vector needs at least 2 classes, got {}",
                values.len()
            )));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::validation(format!(
                "probability entry {i} = {v} is outside [0, 1]"
            )));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(Error::validation(format!(
                "probabilities sum to {sum}, expected 1 within {PROB_SUM_TOLERANCE}"
            )));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    /// Index of the largest entry; the lowest index wins ties.
    pub fn argmax(&self) -> ClassId {
        let mut best = 0;
        for (i, &v) in self.0.iter().enumerate().skip(1) {
            if v > self.0[best] {
                best = i;
            }
        }
        best
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

impl TryFrom<Vec<f64>> for ProbabilityVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<ProbabilityVector> for Vec<f64> {
    fn from(p: ProbabilityVector) -> Self {
        p.0
    }
}

/// Activations of the local model's tap layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ActivationVector(Vec<f64>);

impl ActivationVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::validation("activation vector is empty"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "activation entry {i} is not finite"
            )));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

impl TryFrom<Vec<f64>> for ActivationVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<ActivationVector> for Vec<f64> {
    fn from(a: ActivationVector) -> Self {
        a.0
    }
}

/// Orientation-normalized supervisor output: higher is more trustworthy.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TrustScore(f64);

impl TrustScore {
    pub fn new(value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::validation(format!(
                "trust score {value} is not finite"
            )));
        }
        Ok(Self(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SupervisorKind {
    Sm,
    Mdsa,
}

impl fmt::Display for SupervisorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SupervisorKind::Sm => "sm",
            SupervisorKind::Mdsa => "mdsa",
        })
    }
}

impl FromStr for SupervisorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sm" | "softmax" => Ok(SupervisorKind::Sm),
            "mdsa" => Ok(SupervisorKind::Mdsa),
            other => Err(Error::Config(format!("unknown supervisor {other:?}"))),
        }
    }
}

/// Maximum softmax probability as a confidence score.
pub fn softmax_confidence(probs: &ProbabilityVector) -> TrustScore {
    TrustScore(probs.max())
}

/// Key of one fitted activation distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum MdsaKey {
    Global,
    Class(ClassId),
}

impl fmt::Display for MdsaKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MdsaKey::Global => f.write_str("global"),
            MdsaKey::Class(c) => write!(f, "{c}"),
        }
    }
}

impl TryFrom<String> for MdsaKey {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        if s == "global" {
            return Ok(MdsaKey::Global);
        }
        s.parse()
            .map(MdsaKey::Class)
            .map_err(|_| Error::validation(format!("invalid MDSA class key {s:?}")))
    }
}

impl From<MdsaKey> for String {
    fn from(k: MdsaKey) -> Self {
        k.to_string()
    }
}

/// Mean and regularized precision of one activation distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub mean: Vec<f64>,
    /// Row-major `(Σ + λI)⁻¹`.
    pub precision: Vec<f64>,
    /// The λ that was added to the covariance diagonal.
    pub lambda: f64,
    pub samples: usize,
}

impl ClassStats {
    /// Builds stats from a mean and covariance, adding `lambda` to the diagonal.
    pub fn from_moments(
        key: MdsaKey,
        mean: Vec<f64>,
        covariance: &[f64],
        lambda: f64,
        samples: usize,
    ) -> Result<Self> {
        let d = mean.len();
        if d == 0 || covariance.len() != d * d {
            return Err(Error::validation(format!(
                "covariance has {} entries, expected {}",
                covariance.len(),
                d * d
            )));
        }
        if lambda < 0.0 || !lambda.is_finite() {
            return Err(Error::validation(format!(
                "lambda {lambda} must be finite and >= 0"
            )));
        }
        let mut regularized = covariance.to_vec();
        for i in 0..d {
            regularized[i * d + i] += lambda;
        }
        let chol = linalg::cholesky(&regularized, d).ok_or(Error::Singular {
            class: key.to_string(),
        })?;
        let precision = linalg::cholesky_inverse(&chol, d);
        if precision.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular {
                class: key.to_string(),
            });
        }
        Ok(Self {
            mean,
            precision,
            lambda,
            samples,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn distance(&self, x: &[f64]) -> f64 {
        let diff: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        // Rounding can make the form a hair negative for x ≈ μ.
        linalg::quadratic_form(&self.precision, &diff)
            .max(0.0)
            .sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MdsaModelRepr {
    class_conditional: bool,
    lambda_scale: f64,
    per_class: BTreeMap<MdsaKey, ClassStats>,
}

/// Fitted activation distributions, immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdsaModelRepr", into = "MdsaModelRepr")]
pub struct MdsaModel {
    class_conditional: bool,
    lambda_scale: f64,
    per_class: BTreeMap<MdsaKey, ClassStats>,
    dim: usize,
}

impl TryFrom<MdsaModelRepr> for MdsaModel {
    type Error = Error;

    fn try_from(r: MdsaModelRepr) -> Result<Self> {
        let dim = r
            .per_class
            .values()
            .next()
            .map(ClassStats::dim)
            .ok_or_else(|| Error::validation("MDSA model has no classes"))?;
        if dim == 0 {
            return Err(Error::validation("MDSA model has zero dimension"));
        }
        if !r.class_conditional
            && (r.per_class.len() != 1 || !r.per_class.contains_key(&MdsaKey::Global))
        {
            return Err(Error::validation(
                "global MDSA model must contain exactly one \"global\" entry",
            ));
        }
        if r.class_conditional && r.per_class.contains_key(&MdsaKey::Global) {
            return Err(Error::validation(
                "class-conditional MDSA model must not contain a \"global\" entry",
            ));
        }
        for (key, stats) in &r.per_class {
            if stats.dim() != dim || stats.precision.len() != dim * dim {
                return Err(Error::validation(format!(
                    "class {key} has dimension {}, expected {dim}",
                    stats.dim()
                )));
            }
            if !linalg::is_symmetric(&stats.precision, dim, SYMMETRY_TOLERANCE) {
                return Err(Error::validation(format!(
                    "precision of class {key} is not symmetric"
                )));
            }
            if linalg::cholesky(&stats.precision, dim).is_none() {
                return Err(Error::Singular {
                    class: key.to_string(),
                });
            }
        }
        Ok(Self {
            class_conditional: r.class_conditional,
            lambda_scale: r.lambda_scale,
            per_class: r.per_class,
            dim,
        })
    }
}

impl From<MdsaModel> for MdsaModelRepr {
    fn from(m: MdsaModel) -> Self {
        Self {
            class_conditional: m.class_conditional,
            lambda_scale: m.lambda_scale,
            per_class: m.per_class,
        }
    }
}

impl MdsaModel {
    /// A global model from explicit moments. `lambda` is absolute, not scaled.
    pub fn from_moments(mean: Vec<f64>, covariance: &[f64], lambda: f64) -> Result<Self> {
        let stats = ClassStats::from_moments(MdsaKey::Global, mean, covariance, lambda, 0)?;
        let dim = stats.dim();
        Ok(Self {
            class_conditional: false,
            lambda_scale: 0.0,
            per_class: BTreeMap::from([(MdsaKey::Global, stats)]),
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class_conditional(&self) -> bool {
        self.class_conditional
    }

    pub fn lambda_scale(&self) -> f64 {
        self.lambda_scale
    }

    pub fn classes(&self) -> impl Iterator<Item = (&MdsaKey, &ClassStats)> {
        self.per_class.iter()
    }

    pub fn stats(&self, key: MdsaKey) -> Option<&ClassStats> {
        self.per_class.get(&key)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("model serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Fits per-class (or global) activation means and regularized precisions.
///
/// Covariances use the `n − 1` denominator and are shrunk by
/// `λ = lambda_scale · trace(Σ) / d`, floored at [`LAMBDA_FLOOR`] whenever
/// `lambda_scale > 0`. A zero `lambda_scale` fits the raw covariance.
pub fn fit_mdsa(
    activations: &[ActivationVector],
    labels: &[ClassId],
    class_conditional: bool,
    lambda_scale: f64,
) -> Result<MdsaModel> {
    let first = activations
        .first()
        .ok_or_else(|| Error::validation("no activations to fit"))?;
    let d = first.dim();
    if let Some(i) = activations.iter().position(|a| a.dim() != d) {
        return Err(Error::validation(format!(
            "activation {i} has dimension {}, expected {d}",
            activations[i].dim()
        )));
    }
    if lambda_scale < 0.0 || !lambda_scale.is_finite() {
        return Err(Error::validation(format!(
            "lambda_scale {lambda_scale} must be finite and >= 0"
        )));
    }

    let mut groups: BTreeMap<MdsaKey, Vec<&[f64]>> = BTreeMap::new();
    if class_conditional {
        if labels.len() != activations.len() {
            return Err(Error::validation(format!(
                "{} labels for {} activations",
                labels.len(),
                activations.len()
            )));
        }
        for (a, &c) in activations.iter().zip(labels) {
            groups
                .entry(MdsaKey::Class(c))
                .or_default()
                .push(a.values());
        }
    } else {
        groups.insert(
            MdsaKey::Global,
            activations.iter().map(ActivationVector::values).collect(),
        );
    }

    let mut per_class = BTreeMap::new();
    for (key, rows) in groups {
        let n = rows.len();
        if n < d + 1 {
            return Err(Error::InsufficientData {
                class: key.to_string(),
                needed: d + 1,
                got: n,
            });
        }
        let mut mean = vec![0.0; d];
        for row in &rows {
            for (m, v) in mean.iter_mut().zip(*row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut cov = vec![0.0; d * d];
        for row in &rows {
            for i in 0..d {
                let di = row[i] - mean[i];
                for j in 0..=i {
                    cov[i * d + j] += di * (row[j] - mean[j]);
                }
            }
        }
        let denom = (n - 1) as f64;
        for i in 0..d {
            for j in 0..=i {
                let v = cov[i * d + j] / denom;
                cov[i * d + j] = v;
                cov[j * d + i] = v;
            }
        }
        let lambda = if lambda_scale > 0.0 {
            let trace: f64 = (0..d).map(|i| cov[i * d + i]).sum();
            (lambda_scale * trace / d as f64).max(LAMBDA_FLOOR)
        } else {
            0.0
        };
        let stats = ClassStats::from_moments(key, mean, &cov, lambda, n)?;
        per_class.insert(key, stats);
    }

    Ok(MdsaModel {
        class_conditional,
        lambda_scale,
        per_class,
        dim: d,
    })
}

/// Mahalanobis distance of `activation` to the distribution of `predicted_class`.
///
/// Global models ignore `predicted_class`.
pub fn mdsa_distance(
    model: &MdsaModel,
    activation: &ActivationVector,
    predicted_class: ClassId,
) -> Result<f64> {
    if activation.dim() != model.dim {
        return Err(Error::validation(format!(
            "activation has dimension {}, model expects {}",
            activation.dim(),
            model.dim
        )));
    }
    let key = if model.class_conditional {
        MdsaKey::Class(predicted_class)
    } else {
        MdsaKey::Global
    };
    let stats = model
        .per_class
        .get(&key)
        .ok_or_else(|| Error::UnknownClass(key.to_string()))?;
    Ok(stats.distance(activation.values()))
}

/// A ready-to-use supervisor.
#[derive(Debug, Clone)]
pub enum Supervisor {
    Softmax,
    Mdsa(std::sync::Arc<MdsaModel>),
}

impl Supervisor {
    pub fn kind(&self) -> SupervisorKind {
        match self {
            Supervisor::Softmax => SupervisorKind::Sm,
            Supervisor::Mdsa(_) => SupervisorKind::Mdsa,
        }
    }

    pub fn score(
        &self,
        probs: &ProbabilityVector,
        activation: Option<&ActivationVector>,
    ) -> Result<TrustScore> {
        match self {
            Supervisor::Softmax => Ok(softmax_confidence(probs)),
            Supervisor::Mdsa(model) => {
                let activation = activation.ok_or_else(|| {
                    Error::Config("MDSA supervision requires an activation vector".into())
                })?;
                let distance = mdsa_distance(model, activation, probs.argmax())?;
                TrustScore::new(-distance)
            }
        }
    }
}

/// Scores one trace record with the selected supervisor.
pub fn trust_score(
    kind: SupervisorKind,
    record: &PredictionRecord,
    mdsa: Option<&MdsaModel>,
) -> Result<TrustScore> {
    match kind {
        SupervisorKind::Sm => Ok(softmax_confidence(&record.local_probs)),
        SupervisorKind::Mdsa => {
            let model = mdsa
                .ok_or_else(|| Error::Config("MDSA supervision requires a fitted model".into()))?;
            let activation = record.activation.as_ref().ok_or_else(|| {
                Error::Config(format!("record {} has no activation for MDSA", record.id))
            })?;
            let distance = mdsa_distance(model, activation, record.local_probs.argmax())?;
            TrustScore::new(-distance)
        }
    }
}
