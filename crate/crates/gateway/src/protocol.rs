//! Wire types shared by the remote client, the stub and the gateway.
//!
//! `POST /v1/predict` takes `{"input": <string | number array>, "metadata": {...}?}`
//! and answers `{"label": int, "probs": [..]?, "cost_units": number?, "tokens": int?}`.
//! The gateway adds `route` and `trust_score` to the same response shape.

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const PREDICT_PATH: &str = "/v1/predict";
pub const LEDGER_PATH: &str = "/v1/ledger";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PredictInput {
    Numbers(Vec<f64>),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictRequest {
    pub input: PredictInput,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost_units: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GatewayRoute {
    Local,
    Remote,
    LocalFallback,
}

/// Gateway answer: the remote response shape plus routing extensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayResponse {
    #[serde(flatten)]
    pub prediction: PredictResponse,
    pub route: GatewayRoute,
    pub trust_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}
