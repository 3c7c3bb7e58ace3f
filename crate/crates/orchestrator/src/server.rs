//! Running the API: a blocking in-process handle for tests and tools, and
//! an async entry point for the binary.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use tokio::sync::oneshot;

use crate::api::router;
use crate::config::ServerConfig;
use crate::state::{AppState, StartupError};

/// Seals due ledger batches and sweeps expired sessions until dropped.
async fn housekeeping(state: Arc<AppState>) {
    let tick = Duration::from_millis((state.config.ledger.max_age_ms / 4).clamp(5, 250));
    let mut interval = tokio::time::interval(tick);
    loop {
        interval.tick().await;
        if let Err(e) = state.ledger.seal_if_due(Instant::now()) {
            tracing::error!(error = %e, "sealing ledger batch failed");
        }
        state.sweep(dipa_core::unix_now());
    }
}

pub async fn serve_listener(
    state: Arc<AppState>,
    listener: tokio::net::TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let sealer = tokio::spawn(housekeeping(state.clone()));
    let result = axum::serve(listener, router(state.clone())).with_graceful_shutdown(shutdown).await;
    sealer.abort();
    if let Err(e) = state.ledger.seal_batch() {
        tracing::warn!(error = %e, "final seal failed");
    }
    result
}

/// Binds `config.bind` and serves until ctrl-c.
pub async fn serve(config: ServerConfig) -> Result<(), StartupError> {
    let bind = config.bind.clone();
    let state = AppState::new(config)?;
    let listener = tokio::net::TcpListener::bind(&bind)
        .await
        .map_err(|source| StartupError::Io { path: bind.clone().into(), source })?;
    tracing::info!(addr = %listener.local_addr().map(|a| a.to_string()).unwrap_or(bind.clone()), issuer = %state.issuer_did, "listening");
    let shutdown = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    serve_listener(state, listener, shutdown).await.map_err(|source| StartupError::Io { path: bind.into(), source })
}

/// A server on its own runtime thread. Dropping it shuts the server down.
pub struct ServerHandle {
    pub addr: SocketAddr,
    pub state: Arc<AppState>,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl std::fmt::Debug for ServerHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ServerHandle").field("addr", &self.addr).finish_non_exhaustive()
    }
}

impl ServerHandle {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Starts a server in the background; use `bind = "127.0.0.1:0"` for a
/// free port.
pub fn spawn(config: ServerConfig) -> Result<ServerHandle, StartupError> {
    let bind = config.bind.clone();
    let io_err = |source| StartupError::Io { path: bind.clone().into(), source };
    let listener = std::net::TcpListener::bind(&bind).map_err(io_err)?;
    listener.set_nonblocking(true).map_err(io_err)?;
    let addr = listener.local_addr().map_err(io_err)?;
    let state = AppState::new(config)?;
    let (tx, rx) = oneshot::channel::<()>();
    let st = state.clone();
    let thread = std::thread::Builder::new()
        .name(format!("dipa-server-{}", addr.port()))
        .spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .worker_threads(4)
                .enable_all()
                .build()
                .expect("tokio runtime");
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener).expect("listener registers with runtime");
                let shutdown = async {
                    let _ = rx.await;
                };
                if let Err(e) = serve_listener(st, listener, shutdown).await {
                    tracing::error!(error = %e, "server stopped");
                }
            });
        })
        .map_err(io_err)?;
    Ok(ServerHandle { addr, state, shutdown: Some(tx), thread: Some(thread) })
}
