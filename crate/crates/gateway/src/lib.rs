//! HTTP surface of the cost-aware routing system: a client for the remote
//! model service, a deterministic stub of that service, and the gateway that
//! answers trusted inputs locally and forwards the rest.

pub mod cli;
pub mod client;
pub mod config;
pub mod gateway;
pub mod protocol;
pub mod stub;

/// Resolves on Ctrl-C or SIGTERM.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
}
