//! Replica registry, per-replica batch queues and their dispatchers.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicU32, AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use predserve_core::batching::{delay_budget, route_to_replica, BatchQueue, BatchSizer, ReplicaLoad, SLO_HEADROOM};
use predserve_core::cache::{PredictionCache, Reservation};
use predserve_core::config::{ModelConfig, RuntimeConfig};
use predserve_core::{Error, InputPayload, InputType, ModelName, Output, ReplicaId, Result};
use tokio::net::TcpListener;
use tokio::sync::Notify;

use crate::metrics::{labeled, Metrics};
use crate::transport::{ReplicaConnection, TransportConfig};

struct ReplicaWorker {
    conn: Arc<ReplicaConnection>,
    queue: Mutex<BatchQueue<Reservation, Instant>>,
    // flipped under the queue lock when the replica leaves rotation
    alive: AtomicBool,
    max_batch: AtomicU32,
    notify: Notify,
}

impl ReplicaWorker {
    fn load(&self) -> ReplicaLoad {
        ReplicaLoad {
            queue_len: self.queue.lock().len(),
            max_batch: self.max_batch.load(Ordering::Relaxed),
            suspect: self.conn.is_suspect(),
        }
    }
}

struct ModelState {
    cfg: ModelConfig,
    input_type: Option<InputType>,
    target: Duration,
    batch_delay_micros: AtomicU64,
    replicas: Mutex<Vec<Arc<ReplicaWorker>>>,
    cursor: AtomicUsize,
}

impl ModelState {
    fn batch_delay(&self) -> Duration {
        Duration::from_micros(self.batch_delay_micros.load(Ordering::Relaxed))
    }
}

/// Snapshot of one connected replica.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaInfo {
    pub id: ReplicaId,
    pub model: ModelName,
    pub queue_len: usize,
    pub max_batch: u32,
    pub suspect: bool,
}

pub struct ModelLayer {
    cache: Arc<PredictionCache>,
    metrics: Arc<Metrics>,
    models: HashMap<ModelName, Arc<ModelState>>,
    transport: TransportConfig,
    next_replica: AtomicU64,
}

impl ModelLayer {
    /// Each model's batching target is the headroom fraction of the tightest
    /// SLO among the applications that use it.
    pub fn new(cfg: &RuntimeConfig, cache: Arc<PredictionCache>, metrics: Arc<Metrics>, transport: TransportConfig) -> Self {
        let models = cfg
            .models
            .iter()
            .map(|(name, mc)| {
                let users: Vec<_> = cfg.apps.values().filter(|a| a.models.contains(name)).collect();
                let slo = users.iter().map(|a| a.slo).min().unwrap_or(Duration::from_millis(100));
                let state = ModelState {
                    cfg: mc.clone(),
                    input_type: users.first().map(|a| a.input_type),
                    target: slo.mul_f64(SLO_HEADROOM),
                    batch_delay_micros: AtomicU64::new(mc.batch_delay.as_micros() as u64),
                    replicas: Mutex::new(Vec::new()),
                    cursor: AtomicUsize::new(0),
                };
                (name.clone(), Arc::new(state))
            })
            .collect();
        ModelLayer { cache, metrics, models, transport, next_replica: AtomicU64::new(1) }
    }

    pub fn cache(&self) -> &Arc<PredictionCache> {
        &self.cache
    }

    pub fn set_batch_delay(&self, model: &ModelName, delay: Duration) -> bool {
        match self.models.get(model) {
            Some(m) => {
                m.batch_delay_micros.store(delay.as_micros() as u64, Ordering::Relaxed);
                true
            }
            None => false,
        }
    }

    pub fn replicas(&self) -> Vec<ReplicaInfo> {
        let mut out = Vec::new();
        for (name, m) in &self.models {
            for w in m.replicas.lock().iter() {
                let l = w.load();
                out.push(ReplicaInfo {
                    id: w.conn.id(),
                    model: name.clone(),
                    queue_len: l.queue_len,
                    max_batch: l.max_batch,
                    suspect: l.suspect,
                });
            }
        }
        out.sort_by_key(|r| r.id);
        out
    }

    pub fn replica_count(&self, model: &ModelName) -> usize {
        self.models.get(model).map_or(0, |m| m.replicas.lock().len())
    }

    /// Accepts container connections until the listener fails.
    pub async fn accept_loop(self: Arc<Self>, listener: TcpListener) {
        loop {
            let (stream, peer) = match listener.accept().await {
                Ok(s) => s,
                Err(e) => {
                    tracing::warn!(error = %e, "container accept failed");
                    tokio::time::sleep(Duration::from_millis(50)).await;
                    continue;
                }
            };
            let layer = self.clone();
            tokio::spawn(async move {
                let id = ReplicaId(layer.next_replica.fetch_add(1, Ordering::Relaxed));
                match ReplicaConnection::accept(stream, id, layer.transport).await {
                    Ok(conn) => {
                        if let Err(e) = layer.add_replica(conn.clone()) {
                            tracing::warn!(%peer, error = %e, "rejected container");
                            conn.close("rejected");
                        }
                    }
                    Err(e) => tracing::warn!(%peer, error = %e, "container handshake failed"),
                }
            });
        }
    }

    /// Puts a connected replica into rotation and starts its dispatcher.
    pub fn add_replica(self: &Arc<Self>, conn: Arc<ReplicaConnection>) -> Result<()> {
        let hs = conn.handshake().clone();
        let name = ModelName::new(&hs.model_name);
        let model = self.models.get(&name).ok_or_else(|| Error::Config(format!("container registered undeclared model `{name}`")))?.clone();
        if let Some(want) = model.input_type {
            if want != hs.input_type {
                return Err(Error::InputTypeMismatch { expected: want, actual: hs.input_type });
            }
        }
        let sizer = BatchSizer::new(model.cfg.batch_strategy, model.target).with_additive_step(model.cfg.additive_step);
        let worker = Arc::new(ReplicaWorker {
            conn,
            queue: Mutex::new(BatchQueue::new()),
            alive: AtomicBool::new(true),
            max_batch: AtomicU32::new(sizer.max_batch()),
            notify: Notify::new(),
        });
        model.replicas.lock().push(worker.clone());
        self.metrics.inc("replica_connects_total");
        tracing::info!(replica = %worker.conn.id(), model = %name, version = hs.model_version, "replica connected");
        tokio::spawn(self.clone().dispatch_loop(model, worker, sizer));
        Ok(())
    }

    /// Queues a cache reservation on the least loaded replica of `model`.
    /// With no replica the reservation is released and the error returned.
    pub fn enqueue(&self, model: &ModelName, reservation: Reservation, deadline: Instant) -> Result<()> {
        let Some(state) = self.models.get(model) else {
            self.fail(reservation);
            return Err(Error::ModelUnavailable(model.clone()));
        };
        let item = reservation;
        // a replica can leave rotation between routing and pushing
        for _ in 0..8 {
            let Some(worker) = Self::route(state) else { break };
            let mut q = worker.queue.lock();
            if worker.alive.load(Ordering::Acquire) {
                q.push(item, Instant::now(), deadline);
                drop(q);
                worker.notify.notify_one();
                return Ok(());
            }
            drop(q);
            std::thread::yield_now();
        }
        self.fail(item);
        Err(Error::ModelUnavailable(model.clone()))
    }

    fn route(state: &ModelState) -> Option<Arc<ReplicaWorker>> {
        let replicas = state.replicas.lock();
        let loads: Vec<ReplicaLoad> = replicas.iter().map(|w| w.load()).collect();
        let cursor = state.cursor.fetch_add(1, Ordering::Relaxed);
        route_to_replica(&loads, cursor % loads.len().max(1)).map(|i| replicas[i].clone())
    }

    fn complete(&self, r: Reservation, out: Output) {
        match r {
            Reservation::Cached(key) => self.cache.populate(&key, out),
            Reservation::Uncached(_, tx) => {
                let _ = tx.send(out);
            }
        }
    }

    fn fail(&self, r: Reservation) {
        match r {
            Reservation::Cached(key) => self.cache.abandon(&key),
            Reservation::Uncached(..) => {}
        }
    }

    fn remove_replica(&self, model: &ModelState, worker: &Arc<ReplicaWorker>) {
        model.replicas.lock().retain(|w| !Arc::ptr_eq(w, worker));
        let stranded = {
            let mut q = worker.queue.lock();
            worker.alive.store(false, Ordering::Release);
            q.clear()
        };
        self.metrics.inc("replica_disconnects_total");
        let name = &model.cfg.name;
        for q in stranded {
            let _ = self.enqueue(name, q.item, q.deadline);
        }
    }

    async fn dispatch_loop(self: Arc<Self>, model: Arc<ModelState>, w: Arc<ReplicaWorker>, mut sizer: BatchSizer) {
        let name = model.cfg.name.as_str().to_string();
        let gauge = format!("max_batch_size{{model=\"{name}\",replica=\"{}\"}}", w.conn.id());
        self.metrics.set_gauge(&gauge, sizer.max_batch() as f64);
        'serve: loop {
            loop {
                if w.conn.is_closed() {
                    break 'serve;
                }
                if !w.queue.lock().is_empty() {
                    break;
                }
                tokio::select! {
                    _ = w.notify.notified() => {}
                    _ = w.conn.closed() => {}
                }
            }

            let max = sizer.max_batch();
            let budget = {
                let q = w.queue.lock();
                let now = Instant::now();
                let slack = q.earliest_deadline().map(|d| d.saturating_duration_since(now).saturating_sub(sizer.expected_latency()));
                delay_budget(q.len(), max, model.batch_delay(), slack)
            };
            if !budget.is_zero() {
                let until = tokio::time::Instant::now() + budget;
                while w.queue.lock().len() < max as usize {
                    tokio::select! {
                        _ = w.notify.notified() => {}
                        _ = tokio::time::sleep_until(until) => break,
                        _ = w.conn.closed() => break,
                    }
                }
            }

            let drained = w.queue.lock().drain(max as usize, Instant::now());
            if !drained.expired.is_empty() {
                self.metrics.add(&labeled("expired_in_queue_total", "model", &name), drained.expired.len() as u64);
            }
            for e in drained.expired {
                self.fail(e.item);
            }
            if drained.batch.is_empty() {
                continue;
            }
            let n = drained.batch.len();
            let inputs: Vec<InputPayload> = drained.batch.iter().map(|q| q.item.key().input()).collect();
            let started = Instant::now();
            let result = w.conn.predict(&inputs, model.cfg.replica_timeout).await;
            let latency = started.elapsed();
            match result {
                Ok(outputs) => {
                    let m = sizer.observe(n as u32, latency);
                    w.max_batch.store(m, Ordering::Relaxed);
                    self.metrics.set_gauge(&gauge, m as f64);
                    self.metrics.batch_latency.observe(latency);
                    self.metrics.add(&labeled("batches_total", "model", &name), 1);
                    self.metrics.add(&labeled("batched_queries_total", "model", &name), n as u64);
                    for (q, outs) in drained.batch.into_iter().zip(outputs) {
                        let first = outs.into_iter().next().unwrap_or_default();
                        self.complete(q.item, Output::new(first));
                    }
                }
                Err(Error::ReplicaTimeout(_)) => {
                    let m = sizer.observe(n as u32, latency);
                    w.max_batch.store(m, Ordering::Relaxed);
                    self.metrics.set_gauge(&gauge, m as f64);
                    self.metrics.add(&labeled("replica_timeouts_total", "model", &name), 1);
                    for q in drained.batch {
                        self.fail(q.item);
                    }
                }
                Err(Error::Container(msg)) => {
                    tracing::warn!(replica = %w.conn.id(), model = %name, error = %msg, "batch failed in container");
                    self.metrics.add(&labeled("container_errors_total", "model", &name), 1);
                    for q in drained.batch {
                        self.fail(q.item);
                    }
                }
                Err(e) => {
                    tracing::info!(replica = %w.conn.id(), model = %name, error = %e, "replica lost mid-batch");
                    for q in drained.batch {
                        self.fail(q.item);
                    }
                    break 'serve;
                }
            }
        }
        w.conn.close("dispatcher stopped");
        self.remove_replica(&model, &w);
        self.metrics.set_gauge(&gauge, 0.0);
    }
}
