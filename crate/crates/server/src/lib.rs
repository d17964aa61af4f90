//! The serving process: container transport, batching dispatchers, the
//! query frontend and its HTTP API, plus reference containers.

pub mod container;
pub mod frontend;
pub mod http;
pub mod metrics;
pub mod model_layer;
pub mod transport;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use predserve_core::cache::PredictionCache;
use predserve_core::config::RuntimeConfig;
use predserve_core::selection::PolicyRegistry;
use predserve_core::{Error, Result};
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use crate::frontend::{open_store, Frontend};
use crate::metrics::Metrics;
use crate::model_layer::ModelLayer;
use crate::transport::TransportConfig;

pub struct ServerOptions {
    pub config: RuntimeConfig,
    /// Where `config` came from; enables `/admin/reload`.
    pub config_path: Option<PathBuf>,
    pub registry: PolicyRegistry,
    pub transport: TransportConfig,
}

impl ServerOptions {
    pub fn new(config: RuntimeConfig) -> Self {
        ServerOptions { config, config_path: None, registry: PolicyRegistry::new(), transport: TransportConfig::default() }
    }

    pub fn from_file(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let config = RuntimeConfig::load(&path)?;
        Ok(ServerOptions { config_path: Some(path), ..Self::new(config) })
    }
}

pub struct RunningServer {
    pub http_addr: SocketAddr,
    pub container_addr: SocketAddr,
    pub frontend: Arc<Frontend>,
    shutdown: Option<oneshot::Sender<()>>,
    tasks: Vec<JoinHandle<()>>,
}

impl RunningServer {
    pub async fn shutdown(mut self) {
        self.stop();
        for t in self.tasks.drain(..) {
            let _ = t.await;
        }
    }

    fn stop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        for t in &self.tasks {
            t.abort();
        }
    }
}

impl Drop for RunningServer {
    fn drop(&mut self) {
        self.stop();
    }
}

fn bind_error(what: &str, addr: &str, e: std::io::Error) -> Error {
    Error::Config(format!("cannot bind {what} on {addr}: {e}"))
}

/// Binds both listeners and starts serving. The container port is taken
/// from `service.container_port` on the listen address's host.
pub async fn start(opts: ServerOptions) -> Result<RunningServer> {
    let cfg = opts.config;
    let listen = cfg.service.listen_addr.clone();
    let http = TcpListener::bind(&listen).await.map_err(|e| bind_error("http", &listen, e))?;
    let http_addr = http.local_addr().map_err(|e| bind_error("http", &listen, e))?;
    let container_bind = SocketAddr::new(http_addr.ip(), cfg.service.container_port).to_string();
    let containers = TcpListener::bind(&container_bind).await.map_err(|e| bind_error("containers", &container_bind, e))?;
    let container_addr = containers.local_addr().map_err(|e| bind_error("containers", &container_bind, e))?;

    let metrics = Arc::new(Metrics::default());
    let cache = Arc::new(PredictionCache::new(cfg.cache_capacity));
    let layer = Arc::new(ModelLayer::new(&cfg, cache, metrics.clone(), opts.transport));
    let store = open_store(&cfg)?;
    let (frontend, feedback_rx) = Frontend::new(cfg, opts.config_path, &opts.registry, layer.clone(), store, metrics)?;

    let (tx, rx) = oneshot::channel::<()>();
    let app = http::router(frontend.clone());
    let tasks = vec![
        tokio::spawn(layer.accept_loop(containers)),
        tokio::spawn(frontend.clone().run_feedback(feedback_rx)),
        tokio::spawn(async move {
            let serve = axum::serve(http, app).with_graceful_shutdown(async {
                let _ = rx.await;
            });
            if let Err(e) = serve.await {
                tracing::error!(error = %e, "http server failed");
            }
        }),
    ];
    tracing::info!(%http_addr, %container_addr, "serving");
    Ok(RunningServer { http_addr, container_addr, frontend, shutdown: Some(tx), tasks })
}
