#![allow(dead_code)]

use std::time::{Duration, Instant};

use predserve_core::config::RuntimeConfig;
use predserve_core::sim::SyntheticModelSpec;
use predserve_core::{InputType, ModelName};
use predserve_server::container::{spawn_container, ContainerHandle, ContainerModel, ContainerOptions, SyntheticModel};
use predserve_server::transport::TransportConfig;
use predserve_server::{start, RunningServer, ServerOptions};
use tokio::sync::{Mutex, MutexGuard};

static SERIAL: Mutex<()> = Mutex::const_new(());

/// Timing-sensitive tests take turns; the machine may have a single core.
pub async fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().await
}

/// `body` holds the app, model and cache sections; the service binds
/// ephemeral loopback ports.
pub fn config(body: &str) -> RuntimeConfig {
    config_with_service("", body)
}

pub fn config_with_service(service: &str, body: &str) -> RuntimeConfig {
    let text = format!("[service]\nlisten_addr = \"127.0.0.1:0\"\ncontainer_port = 0\n{service}\n{body}");
    RuntimeConfig::from_toml_str(&text).unwrap()
}

pub async fn serve(cfg: RuntimeConfig) -> RunningServer {
    start(ServerOptions::new(cfg)).await.unwrap()
}

pub async fn serve_with(opts: ServerOptions) -> RunningServer {
    start(opts).await.unwrap()
}

pub fn fast_transport() -> TransportConfig {
    TransportConfig { heartbeat_interval: Duration::from_millis(100), ..TransportConfig::default() }
}

pub fn container(server: &RunningServer, name: &str, ty: InputType, model: Box<dyn ContainerModel>) -> ContainerHandle {
    spawn_container(model, ContainerOptions { core_addr: server.container_addr, name: name.into(), version: 1, input_type: ty })
}

pub fn synthetic(server: &RunningServer, name: &str, spec: SyntheticModelSpec) -> ContainerHandle {
    container(server, name, InputType::Doubles, Box::new(SyntheticModel::new(spec)))
}

pub fn latency_ms(fixed: f64, per_item: f64) -> SyntheticModelSpec {
    SyntheticModelSpec::with_latency(Duration::from_secs_f64(fixed / 1e3), Duration::from_secs_f64(per_item / 1e3))
}

pub async fn wait_for_replicas(server: &RunningServer, model: &str, n: usize) {
    let m = ModelName::new(model);
    let start = Instant::now();
    while server.frontend.layer().replica_count(&m) < n {
        assert!(start.elapsed() < Duration::from_secs(10), "{model}: replicas never connected");
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
}

pub async fn wait_until(what: &str, timeout: Duration, mut cond: impl FnMut() -> bool) {
    let start = Instant::now();
    while !cond() {
        assert!(start.elapsed() < timeout, "timed out waiting for {what}");
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
}
