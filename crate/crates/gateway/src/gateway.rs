//! The routing gateway: local predict, supervise, forward if untrusted.

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cheapet_core::routing::AdaptationState;
use cheapet_core::{
    CostLedger, LocalModel, MdsaModel, Route, RoutingPolicy, SharedLedger, Supervisor,
    SupervisorKind, TraceMode, adapt, calibrate_threshold, decide, load_trace, load_weights,
    predict_local, trust_score,
};
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use crate::client::{RemoteClient, RemoteError};
use crate::config::{FallbackMode, GatewayConfig, ThresholdSetting};
use crate::protocol::{
    ErrorBody, GatewayResponse, GatewayRoute, LEDGER_PATH, PREDICT_PATH, PredictInput,
    PredictRequest, PredictResponse,
};

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error(transparent)]
    Core(#[from] cheapet_core::Error),
    #[error(transparent)]
    Remote(#[from] RemoteError),
    #[error("{0}")]
    Config(String),
}

/// Threshold and adaptation controller, updated under one lock.
#[derive(Debug, Clone)]
pub struct RouterState {
    pub policy: RoutingPolicy,
    pub adaptation: Option<AdaptationState>,
}

pub struct GatewayState {
    pub model: LocalModel,
    pub supervisor: Supervisor,
    pub router: Mutex<RouterState>,
    pub ledger: SharedLedger,
    pub client: RemoteClient,
    pub fallback: FallbackMode,
}

impl GatewayState {
    pub fn new(
        model: LocalModel,
        supervisor: Supervisor,
        policy: RoutingPolicy,
        adaptation: Option<AdaptationState>,
        client: RemoteClient,
        fallback: FallbackMode,
        currency_unit: &str,
    ) -> Result<Self, GatewayError> {
        policy.validate()?;
        if adaptation.is_some() && policy.target_forward_fraction.is_none() {
            return Err(GatewayError::Config(
                "adaptation requires a target forward fraction".into(),
            ));
        }
        if let Supervisor::Mdsa(m) = &supervisor
            && m.dim() != model.tap_dim()
        {
            return Err(GatewayError::Config(format!(
                "MDSA model dimension {} does not match the local model tap dimension {}",
                m.dim(),
                model.tap_dim()
            )));
        }
        Ok(Self {
            model,
            supervisor,
            router: Mutex::new(RouterState { policy, adaptation }),
            ledger: SharedLedger::new(currency_unit),
            client,
            fallback,
        })
    }

    /// Loads models, resolves the threshold and builds the remote client.
    pub fn from_config(config: &GatewayConfig) -> Result<Self, GatewayError> {
        let model = load_weights(&config.local_model_path)?;
        let supervisor = match config.supervisor_kind {
            SupervisorKind::Sm => Supervisor::Softmax,
            SupervisorKind::Mdsa => {
                let path = config.mdsa_model_path.as_ref().ok_or_else(|| {
                    GatewayError::Config("MDSA supervision requires mdsa_model_path".into())
                })?;
                Supervisor::Mdsa(Arc::new(MdsaModel::load(path)?))
            }
        };
        let threshold = match config.threshold {
            ThresholdSetting::Fixed(t) => t,
            ThresholdSetting::Auto => {
                let (path, target) = config
                    .calibration_trace_path
                    .as_ref()
                    .zip(config.target_forward_fraction)
                    .ok_or_else(|| {
                        GatewayError::Config(
                            "auto threshold needs calibration_trace_path and target_forward_fraction"
                                .into(),
                        )
                    })?;
                let trace = load_trace(path, TraceMode::Strict)?;
                let mdsa = match &supervisor {
                    Supervisor::Mdsa(m) => Some(m.as_ref()),
                    Supervisor::Softmax => None,
                };
                let scores = trace
                    .iter()
                    .map(|r| trust_score(config.supervisor_kind, r, mdsa).map(|s| s.value()))
                    .collect::<Result<Vec<_>, _>>()?;
                let c = calibrate_threshold(&scores, target)?;
                tracing::info!(
                    threshold = c.threshold,
                    target = c.target_forward_fraction,
                    achieved = c.achieved_forward_fraction,
                    n = c.n,
                    "calibrated threshold"
                );
                c.threshold
            }
        };
        let mut policy = RoutingPolicy::new(config.supervisor_kind, threshold)?;
        if let Some(t) = config.target_forward_fraction {
            policy = policy.with_target(t)?;
        }
        let adaptation = match (config.adaptation_enabled, config.target_forward_fraction) {
            (true, Some(t)) => Some(AdaptationState::with_defaults(t)?),
            _ => None,
        };
        let client = RemoteClient::new(config.remote.clone())?;
        Self::new(
            model,
            supervisor,
            policy,
            adaptation,
            client,
            config.fallback,
            &config.currency_unit,
        )
    }

    pub fn policy(&self) -> RoutingPolicy {
        self.router.lock().expect("router lock").policy.clone()
    }

    pub fn ledger(&self) -> CostLedger {
        self.ledger.snapshot()
    }

    /// Decides a route and, when enabled, feeds the decision to the adapter.
    fn route(&self, score: f64) -> Result<Route, cheapet_core::Error> {
        let mut router = self.router.lock().expect("router lock");
        let decision = decide(score, &router.policy)?;
        if let Some(state) = router.adaptation.as_ref() {
            let (next_state, next_policy) = adapt(state, &router.policy, &decision)?;
            router.adaptation = Some(next_state);
            router.policy = next_policy;
        }
        Ok(decision.route)
    }
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (
        status,
        Json(ErrorBody {
            error: message.into(),
        }),
    )
        .into_response()
}

async fn predict(
    State(state): State<Arc<GatewayState>>,
    Json(req): Json<PredictRequest>,
) -> Response {
    let features = match &req.input {
        PredictInput::Numbers(v) => v,
        PredictInput::Text(_) => {
            return error(
                StatusCode::UNPROCESSABLE_ENTITY,
                "the local model requires a numeric feature vector as input",
            );
        }
    };
    let (probs, activation) = match predict_local(&state.model, features) {
        Ok(out) => out,
        Err(e) => return error(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
    };
    let score = match state.supervisor.score(&probs, Some(&activation)) {
        Ok(s) => s.value(),
        Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    };
    let route = match state.route(score) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    };
    let local_answer = |route: GatewayRoute| GatewayResponse {
        prediction: PredictResponse {
            label: probs.argmax(),
            probs: Some(probs.values().to_vec()),
            cost_units: Some(0.0),
            tokens: None,
        },
        route,
        trust_score: score,
    };
    if route == Route::Local {
        state.ledger.record_local();
        return Json(local_answer(GatewayRoute::Local)).into_response();
    }
    match state.client.request_remote(&req).await {
        Ok(remote) => {
            if let Err(e) = state.ledger.record_remote(remote.cost_units) {
                return error(StatusCode::BAD_GATEWAY, e.to_string());
            }
            // Pass the remote answer through untouched; the derived cost
            // goes to the ledger only.
            Json(GatewayResponse {
                prediction: remote.response,
                route: GatewayRoute::Remote,
                trust_score: score,
            })
            .into_response()
        }
        Err(e) => {
            tracing::warn!(error = %e, "remote prediction failed");
            match state.fallback {
                FallbackMode::Local => {
                    state.ledger.record_local();
                    Json(local_answer(GatewayRoute::LocalFallback)).into_response()
                }
                FallbackMode::Error => error(StatusCode::BAD_GATEWAY, e.to_string()),
            }
        }
    }
}

async fn ledger(State(state): State<Arc<GatewayState>>) -> Json<CostLedger> {
    Json(state.ledger())
}

pub fn router(state: Arc<GatewayState>) -> Router {
    Router::new()
        .route(PREDICT_PATH, post(predict))
        .route(LEDGER_PATH, get(ledger))
        .with_state(state)
}

/// A gateway served on a background task.
pub struct GatewayHandle {
    pub addr: SocketAddr,
    pub state: Arc<GatewayState>,
    shutdown: Option<oneshot::Sender<()>>,
    task: JoinHandle<()>,
}

impl GatewayHandle {
    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Stops accepting connections and waits for in-flight requests.
    pub async fn shutdown(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        let _ = self.task.await;
    }
}

pub async fn spawn_gateway(
    state: Arc<GatewayState>,
    listener: TcpListener,
) -> std::io::Result<GatewayHandle> {
    let addr = listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let app = router(Arc::clone(&state));
    let task = tokio::spawn(async move {
        let _ = axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await;
    });
    Ok(GatewayHandle {
        addr,
        state,
        shutdown: Some(tx),
        task,
    })
}

/// Warns when the remote endpoint cannot be reached; never fails startup.
async fn probe_remote(base_url: &str) {
    let probe = reqwest::Client::builder()
        .timeout(Duration::from_secs(2))
        .build()
        .expect("probe client");
    if let Err(e) = probe.get(base_url).send().await {
        tracing::warn!(%base_url, error = %e, "remote endpoint unreachable at startup");
    }
}

/// Runs the gateway until a termination signal, then drains in-flight
/// requests for at most `shutdown_deadline_ms`.
pub async fn serve(config: GatewayConfig) -> Result<(), ServeError> {
    let state = Arc::new(GatewayState::from_config(&config).map_err(ServeError::Setup)?);
    probe_remote(&config.remote.base_url).await;
    let listener = TcpListener::bind(&config.listen_address)
        .await
        .map_err(ServeError::Io)?;
    tracing::info!(addr = %listener.local_addr().map_err(ServeError::Io)?, "gateway listening");

    let reporter = {
        let state = Arc::clone(&state);
        let interval = Duration::from_millis(config.ledger_report_interval_ms.max(1));
        tokio::spawn(async move {
            let mut ticker = tokio::time::interval(interval);
            ticker.tick().await;
            loop {
                ticker.tick().await;
                let l = state.ledger();
                tracing::info!(
                    local = l.local_count,
                    remote = l.remote_count,
                    cost = l.remote_cost_total,
                    currency = %l.currency_unit,
                    "ledger"
                );
            }
        })
    };

    let (signalled_tx, signalled_rx) = oneshot::channel::<()>();
    let server = axum::serve(listener, router(state)).with_graceful_shutdown(async move {
        crate::shutdown_signal().await;
        let _ = signalled_tx.send(());
    });
    let deadline = Duration::from_millis(config.shutdown_deadline_ms);
    let result = tokio::select! {
        r = server => r.map_err(ServeError::Io),
        _ = async {
            let _ = signalled_rx.await;
            tokio::time::sleep(deadline).await;
        } => {
            tracing::warn!(?deadline, "shutdown deadline passed with requests in flight");
            Ok(())
        }
    };
    reporter.abort();
    result
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Setup(GatewayError),
    #[error("network error: {0}")]
    Io(std::io::Error),
}
