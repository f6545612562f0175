//! Client for the remote model service with retries and cost extraction.

use std::time::{Duration, Instant};

use cheapet_core::cost::{backoff_ceiling, token_cost};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::protocol::{PREDICT_PATH, PredictRequest, PredictResponse};

/// Longest single backoff sleep.
const MAX_BACKOFF: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteEndpointConfig {
    pub base_url: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub retry_backoff_base_ms: u64,
    #[serde(default)]
    pub cost_per_kilotoken: f64,
    /// Sent as `Authorization: Bearer <token>` when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bearer_token: Option<String>,
}

fn default_timeout_ms() -> u64 {
    10_000
}

fn default_max_retries() -> u32 {
    3
}

fn default_backoff_ms() -> u64 {
    100
}

impl RemoteEndpointConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            timeout_ms: default_timeout_ms(),
            max_retries: default_max_retries(),
            retry_backoff_base_ms: default_backoff_ms(),
            cost_per_kilotoken: 0.0,
            bearer_token: None,
        }
    }

    pub fn validate(&self) -> Result<(), RemoteError> {
        if self.timeout_ms == 0 {
            return Err(RemoteError::Config("timeout_ms must be positive".into()));
        }
        if self.retry_backoff_base_ms == 0 {
            return Err(RemoteError::Config(
                "retry_backoff_base_ms must be positive".into(),
            ));
        }
        if !(self.cost_per_kilotoken >= 0.0 && self.cost_per_kilotoken.is_finite()) {
            return Err(RemoteError::Config(format!(
                "cost_per_kilotoken {} must be finite and >= 0",
                self.cost_per_kilotoken
            )));
        }
        if !self.base_url.starts_with("http://") && !self.base_url.starts_with("https://") {
            return Err(RemoteError::Config(format!(
                "base_url {:?} must start with http:// or https://",
                self.base_url
            )));
        }
        Ok(())
    }

    pub fn predict_url(&self) -> String {
        format!("{}{PREDICT_PATH}", self.base_url.trim_end_matches('/'))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RemotePrediction {
    pub label: usize,
    pub probs: Option<Vec<f64>>,
    pub cost_units: f64,
    pub tokens: Option<u64>,
    /// The remote's answer exactly as received.
    pub response: PredictResponse,
    pub latency: Duration,
    pub attempts: u32,
}

#[derive(Debug, thiserror::Error)]
pub enum RemoteError {
    #[error("remote unavailable after {attempts} attempts: {cause}")]
    Unavailable { attempts: u32, cause: String },
    #[error("remote rejected request with status {status}: {body}")]
    Request { status: u16, body: String },
    #[error("remote protocol error: {0}")]
    Protocol(String),
    #[error("invalid remote configuration: {0}")]
    Config(String),
}

enum Attempt {
    Done(PredictResponse),
    Transient(String),
    Permanent(RemoteError),
}

#[derive(Debug, Clone)]
pub struct RemoteClient {
    http: reqwest::Client,
    config: RemoteEndpointConfig,
}

impl RemoteClient {
    pub fn new(config: RemoteEndpointConfig) -> Result<Self, RemoteError> {
        config.validate()?;
        let http = reqwest::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| RemoteError::Config(e.to_string()))?;
        Ok(Self { http, config })
    }

    pub fn config(&self) -> &RemoteEndpointConfig {
        &self.config
    }

    /// Sends one prediction request, retrying transient failures with
    /// full-jitter exponential backoff.
    pub async fn request_remote(
        &self,
        request: &PredictRequest,
    ) -> Result<RemotePrediction, RemoteError> {
        let started = Instant::now();
        let url = self.config.predict_url();
        let base = Duration::from_millis(self.config.retry_backoff_base_ms);
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&url, request).await {
                Attempt::Done(resp) => {
                    let cost_units = self.cost_of(&resp)?;
                    return Ok(RemotePrediction {
                        label: resp.label,
                        probs: resp.probs.clone(),
                        cost_units,
                        tokens: resp.tokens,
                        response: resp,
                        latency: started.elapsed(),
                        attempts,
                    });
                }
                Attempt::Permanent(e) => return Err(e),
                Attempt::Transient(cause) => {
                    if attempts > self.config.max_retries {
                        return Err(RemoteError::Unavailable { attempts, cause });
                    }
                    let ceiling = backoff_ceiling(base, attempts - 1).min(MAX_BACKOFF);
                    let delay = ceiling.mul_f64(rand::rng().random::<f64>());
                    tracing::debug!(attempts, ?delay, %cause, "retrying remote request");
                    tokio::time::sleep(delay).await;
                }
            }
        }
    }

    async fn attempt(&self, url: &str, request: &PredictRequest) -> Attempt {
        let mut builder = self.http.post(url).json(request);
        if let Some(token) = &self.config.bearer_token {
            builder = builder.bearer_auth(token);
        }
        let resp = match builder.send().await {
            Ok(r) => r,
            Err(e) => return Attempt::Transient(e.to_string()),
        };
        let status = resp.status();
        if status.is_server_error() {
            return Attempt::Transient(format!("status {status}"));
        }
        let body = match resp.bytes().await {
            Ok(b) => b,
            Err(e) => return Attempt::Transient(e.to_string()),
        };
        if !status.is_success() {
            return Attempt::Permanent(RemoteError::Request {
                status: status.as_u16(),
                body: String::from_utf8_lossy(&body).into_owned(),
            });
        }
        match serde_json::from_slice::<PredictResponse>(&body) {
            Ok(r) => Attempt::Done(r),
            Err(e) => Attempt::Permanent(RemoteError::Protocol(e.to_string())),
        }
    }

    /// Server-reported cost wins; otherwise tokens are priced locally.
    fn cost_of(&self, resp: &PredictResponse) -> Result<f64, RemoteError> {
        match (resp.cost_units, resp.tokens) {
            (Some(c), _) if c >= 0.0 && c.is_finite() => Ok(c),
            (Some(c), _) => Err(RemoteError::Protocol(format!("invalid cost_units {c}"))),
            (None, Some(t)) => Ok(token_cost(self.config.cost_per_kilotoken, t)),
            (None, None) => Err(RemoteError::Protocol(
                "response carries neither cost_units nor tokens".into(),
            )),
        }
    }
}
