#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use cheapet_core::local::{Layer, Nonlinearity};
use cheapet_core::routing::AdaptationState;
use cheapet_core::{LocalModel, RoutingPolicy, Supervisor, SupervisorKind};
use cheapet_gateway::client::{RemoteClient, RemoteEndpointConfig};
use cheapet_gateway::config::FallbackMode;
use cheapet_gateway::gateway::{GatewayHandle, GatewayState, spawn_gateway};
use cheapet_gateway::stub::{StubConfig, StubHandle, spawn_stub};
use tokio::net::TcpListener;

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data")
}

/// Two-class model whose logits are `(x0, x1)`; input `(z, 0)` has softmax
/// confidence `σ(|z|)`.
pub fn passthrough_model() -> LocalModel {
    let ident = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
    LocalModel::new(
        2,
        2,
        0,
        vec![
            Layer {
                w: ident.clone(),
                b: vec![0.0, 0.0],
                nonlinearity: Nonlinearity::Identity,
            },
            Layer {
                w: ident,
                b: vec![0.0, 0.0],
                nonlinearity: Nonlinearity::Softmax,
            },
        ],
    )
    .unwrap()
}

pub async fn local_listener() -> TcpListener {
    TcpListener::bind("127.0.0.1:0").await.unwrap()
}

pub async fn start_stub(config: StubConfig) -> StubHandle {
    spawn_stub(config, local_listener().await).await.unwrap()
}

pub fn fast_remote(base_url: String) -> RemoteEndpointConfig {
    RemoteEndpointConfig {
        base_url,
        timeout_ms: 2_000,
        max_retries: 3,
        retry_backoff_base_ms: 1,
        cost_per_kilotoken: 0.12,
        bearer_token: None,
    }
}

pub struct GatewayOptions {
    pub threshold: f64,
    pub target: Option<f64>,
    pub adaptation: bool,
    pub fallback: FallbackMode,
    pub max_retries: u32,
}

impl Default for GatewayOptions {
    fn default() -> Self {
        Self {
            threshold: 0.75,
            target: None,
            adaptation: false,
            fallback: FallbackMode::Local,
            max_retries: 3,
        }
    }
}

pub async fn start_gateway(stub_url: String, opts: GatewayOptions) -> GatewayHandle {
    let mut policy = RoutingPolicy::new(SupervisorKind::Sm, opts.threshold).unwrap();
    if let Some(t) = opts.target {
        policy = policy.with_target(t).unwrap();
    }
    let adaptation = opts
        .adaptation
        .then(|| AdaptationState::with_defaults(opts.target.unwrap()).unwrap());
    let mut remote = fast_remote(stub_url);
    remote.max_retries = opts.max_retries;
    let state = GatewayState::new(
        passthrough_model(),
        Supervisor::Softmax,
        policy,
        adaptation,
        RemoteClient::new(remote).unwrap(),
        opts.fallback,
        "USD",
    )
    .unwrap();
    spawn_gateway(Arc::new(state), local_listener().await)
        .await
        .unwrap()
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}
