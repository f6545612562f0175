//! Deterministic stand-in for the remote model service.
//!
//! Whether an answer is correct is decided by hashing the seed with the
//! request id (`metadata.id`, or the input itself), so repeated runs give the
//! same labels. Failures are drawn from a seeded generator in arrival order.

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use crate::protocol::{ErrorBody, PREDICT_PATH, PredictInput, PredictRequest, PredictResponse};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StubConfig {
    pub accuracy: f64,
    pub latency_ms: u64,
    pub failure_rate: f64,
    pub seed: u64,
    pub num_classes: usize,
    /// The first `fail_first` requests answer 503 regardless of `failure_rate`.
    pub fail_first: u32,
    /// Report this flat `cost_units` instead of a token count.
    pub cost_units: Option<f64>,
}

impl Default for StubConfig {
    fn default() -> Self {
        Self {
            accuracy: 0.9,
            latency_ms: 0,
            failure_rate: 0.0,
            seed: 0,
            num_classes: 2,
            fail_first: 0,
            cost_units: None,
        }
    }
}

impl StubConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.accuracy) {
            return Err(format!("accuracy {} is outside [0, 1]", self.accuracy));
        }
        if !(0.0..=1.0).contains(&self.failure_rate) {
            return Err(format!(
                "failure rate {} is outside [0, 1]",
                self.failure_rate
            ));
        }
        if self.num_classes < 2 {
            return Err("num_classes must be at least 2".into());
        }
        if let Some(c) = self.cost_units
            && !(c >= 0.0 && c.is_finite())
        {
            return Err(format!("cost_units {c} must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StubLogEntry {
    pub id: String,
    pub request: PredictRequest,
    pub status: u16,
}

struct StubState {
    config: StubConfig,
    rng: Mutex<ChaCha8Rng>,
    received: Mutex<u32>,
    log: Mutex<Vec<StubLogEntry>>,
}

/// Hash-derived uniform draw in `[0, 1)` for a given seed, id and purpose.
fn unit_hash(seed: u64, id: &str, purpose: &str) -> f64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(id.as_bytes());
    h.update([0]);
    h.update(purpose.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    (u64::from_le_bytes(bytes) >> 11) as f64 / (1u64 << 53) as f64
}

fn request_id(req: &PredictRequest) -> String {
    match req.metadata.as_ref().and_then(|m| m.get("id")) {
        Some(Value::String(s)) => s.clone(),
        Some(other) => other.to_string(),
        None => {
            let bytes = serde_json::to_vec(&req.input).expect("input serializes");
            Sha256::digest(bytes)
                .iter()
                .map(|b| format!("{b:02x}"))
                .collect()
        }
    }
}

fn estimate_tokens(input: &PredictInput) -> u64 {
    match input {
        PredictInput::Text(s) => (s.chars().count() as u64).div_ceil(4).max(1),
        PredictInput::Numbers(v) => (v.len() as u64).max(1),
    }
}

/// Label the stub answers for a request.
pub fn stub_label(config: &StubConfig, req: &PredictRequest) -> usize {
    let id = request_id(req);
    let k = config.num_classes;
    let truth = req
        .metadata
        .as_ref()
        .and_then(|m| m.get("true_label"))
        .and_then(Value::as_u64)
        .map(|t| t as usize % k);
    match truth {
        Some(t) if unit_hash(config.seed, &id, "correct") < config.accuracy => t,
        Some(t) => {
            let offset = 1 + (unit_hash(config.seed, &id, "wrong") * (k - 1) as f64) as usize;
            (t + offset.min(k - 1)) % k
        }
        None => ((unit_hash(config.seed, &id, "label") * k as f64) as usize).min(k - 1),
    }
}

async fn predict(State(state): State<Arc<StubState>>, body: Json<PredictRequest>) -> Response {
    let Json(req) = body;
    let id = request_id(&req);
    let fail = {
        let mut received = state.received.lock().expect("stub counter");
        *received += 1;
        let forced = *received <= state.config.fail_first;
        let drawn = state.rng.lock().expect("stub rng").random::<f64>() < state.config.failure_rate;
        forced || drawn
    };
    if state.config.latency_ms > 0 {
        tokio::time::sleep(Duration::from_millis(state.config.latency_ms)).await;
    }
    let status = if fail {
        StatusCode::SERVICE_UNAVAILABLE
    } else {
        StatusCode::OK
    };
    state.log.lock().expect("stub log").push(StubLogEntry {
        id,
        request: req.clone(),
        status: status.as_u16(),
    });
    if fail {
        return (
            status,
            Json(ErrorBody {
                error: "injected failure".into(),
            }),
        )
            .into_response();
    }
    let label = stub_label(&state.config, &req);
    let resp = match state.config.cost_units {
        Some(c) => PredictResponse {
            label,
            probs: None,
            cost_units: Some(c),
            tokens: None,
        },
        None => PredictResponse {
            label,
            probs: None,
            cost_units: None,
            tokens: Some(estimate_tokens(&req.input)),
        },
    };
    Json(resp).into_response()
}

async fn log(State(state): State<Arc<StubState>>) -> Json<Vec<StubLogEntry>> {
    Json(state.log.lock().expect("stub log").clone())
}

fn router(state: Arc<StubState>) -> Router {
    Router::new()
        .route("/", get(|| async { "cheapet stub remote" }))
        .route(PREDICT_PATH, post(predict))
        .route("/v1/stub/log", get(log))
        .with_state(state)
}

/// A running stub; dropping it does not stop the server, call [`StubHandle::shutdown`].
pub struct StubHandle {
    pub addr: SocketAddr,
    state: Arc<StubState>,
    shutdown: Option<oneshot::Sender<()>>,
    task: JoinHandle<()>,
}

impl StubHandle {
    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Every request received so far, including injected failures.
    pub fn requests(&self) -> Vec<StubLogEntry> {
        self.state.log.lock().expect("stub log").clone()
    }

    pub async fn shutdown(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        let _ = self.task.await;
    }
}

fn new_state(config: StubConfig) -> Arc<StubState> {
    Arc::new(StubState {
        rng: Mutex::new(ChaCha8Rng::seed_from_u64(config.seed)),
        config,
        received: Mutex::new(0),
        log: Mutex::new(Vec::new()),
    })
}

pub async fn spawn_stub(config: StubConfig, listener: TcpListener) -> std::io::Result<StubHandle> {
    let addr = listener.local_addr()?;
    let state = new_state(config);
    let (tx, rx) = oneshot::channel::<()>();
    let app = router(Arc::clone(&state));
    let task = tokio::spawn(async move {
        let _ = axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await;
    });
    Ok(StubHandle {
        addr,
        state,
        shutdown: Some(tx),
        task,
    })
}

/// Runs the stub until the process receives a termination signal.
pub async fn run_stub(config: StubConfig, listener: TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(new_state(config)))
        .with_graceful_shutdown(crate::shutdown_signal())
        .await
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn req(id: &str, truth: usize) -> PredictRequest {
        PredictRequest {
            input: PredictInput::Text("a fine film".into()),
            metadata: Some(json!({"id": id, "true_label": truth})),
        }
    }

    #[test]
    fn labels_are_deterministic_and_match_accuracy() {
        let config = StubConfig {
            accuracy: 0.7,
            seed: 3,
            ..Default::default()
        };
        let correct = (0..4000)
            .filter(|i| stub_label(&config, &req(&format!("r{i}"), i % 2)) == i % 2)
            .count();
        let rate = correct as f64 / 4000.0;
        assert!((rate - 0.7).abs() < 0.03, "{rate}");
        assert_eq!(
            stub_label(&config, &req("x", 1)),
            stub_label(&config, &req("x", 1))
        );
    }

    #[test]
    fn perfect_and_useless_stub() {
        let perfect = StubConfig {
            accuracy: 1.0,
            num_classes: 5,
            ..Default::default()
        };
        let useless = StubConfig {
            accuracy: 0.0,
            num_classes: 5,
            ..Default::default()
        };
        for i in 0..100 {
            let r = req(&i.to_string(), i % 5);
            assert_eq!(stub_label(&perfect, &r), i % 5);
            let wrong = stub_label(&useless, &r);
            assert_ne!(wrong, i % 5);
            assert!(wrong < 5);
        }
    }

    #[test]
    fn token_estimate() {
        assert_eq!(estimate_tokens(&PredictInput::Text("abcdefghi".into())), 3);
        assert_eq!(estimate_tokens(&PredictInput::Text(String::new())), 1);
        assert_eq!(estimate_tokens(&PredictInput::Numbers(vec![1.0; 7])), 7);
    }

    #[test]
    fn config_validation() {
        assert!(StubConfig::default().validate().is_ok());
        assert!(
            StubConfig {
                accuracy: 1.5,
                ..Default::default()
            }
            .validate()
            .is_err()
        );
        assert!(
            StubConfig {
                failure_rate: -0.1,
                ..Default::default()
            }
            .validate()
            .is_err()
        );
        assert!(
            StubConfig {
                num_classes: 1,
                ..Default::default()
            }
            .validate()
            .is_err()
        );
    }
}
