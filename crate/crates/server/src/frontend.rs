//! Query lifecycle: state lookup, selection, cache and batching, combining at
//! the deadline. Feedback runs on a bounded background pipeline.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use predserve_core::cache::{CacheKey, Lookup};
use predserve_core::config::{AppConfig, HotChanges, RuntimeConfig};
use predserve_core::selection::{
    ContextStateStore, DeadlineRules, DynPolicy, FileBackedStore, InMemoryStore, PolicyParams, PolicyRegistry, StateStoreKind, StateSummary,
};
use predserve_core::{Error, Feedback, FinalPrediction, InputPayload, ModelName, Output, Query, Result};
use tokio::sync::{mpsc, oneshot, Semaphore};

use crate::metrics::{labeled, Metrics};
use crate::model_layer::ModelLayer;

/// Feedback items processed concurrently by the pipeline.
pub const FEEDBACK_CONCURRENCY: usize = 256;

/// Timers round their deadline up to a millisecond tick and the driver parks
/// for whole milliseconds, so a timer can fire up to two ticks late. The
/// combine timer is armed that much early to fire by `deadline - combine_margin`.
pub const TIMER_SLACK: Duration = Duration::from_millis(2);

struct AppRuntime {
    cfg: AppConfig,
    policy: Arc<dyn DynPolicy>,
    threshold_bits: AtomicU64,
}

impl AppRuntime {
    fn rules(&self) -> DeadlineRules {
        DeadlineRules {
            confidence_threshold: f64::from_bits(self.threshold_bits.load(Ordering::Relaxed)),
            default_output: self.cfg.default_output.clone(),
        }
    }
}

/// A combined answer and how long it took end to end.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub prediction: FinalPrediction,
    pub latency: Duration,
}

/// Policy state of one context, for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextState {
    pub policy: String,
    /// False when the context has seen no feedback and the initial state is shown.
    pub stored: bool,
    pub summary: StateSummary,
}

pub struct Frontend {
    apps: HashMap<String, Arc<AppRuntime>>,
    layer: Arc<ModelLayer>,
    store: Arc<dyn ContextStateStore>,
    metrics: Arc<Metrics>,
    combine_margin: Duration,
    feedback_tx: mpsc::Sender<Feedback>,
    config: Mutex<RuntimeConfig>,
    config_path: Option<PathBuf>,
}

pub fn open_store(cfg: &RuntimeConfig) -> Result<Arc<dyn ContextStateStore>> {
    Ok(match &cfg.service.state_store {
        StateStoreKind::InMemory => Arc::new(InMemoryStore::new(cfg.service.max_contexts)),
        StateStoreKind::FileBacked(dir) => Arc::new(FileBackedStore::open(dir, cfg.service.max_contexts)?),
    })
}

impl Frontend {
    /// Builds the frontend and hands back the receiving end of the feedback
    /// queue, to be driven by [`Frontend::run_feedback`].
    pub fn new(
        cfg: RuntimeConfig,
        config_path: Option<PathBuf>,
        registry: &PolicyRegistry,
        layer: Arc<ModelLayer>,
        store: Arc<dyn ContextStateStore>,
        metrics: Arc<Metrics>,
    ) -> Result<(Arc<Self>, mpsc::Receiver<Feedback>)> {
        let mut apps = HashMap::new();
        for (name, a) in &cfg.apps {
            let params = PolicyParams { models: a.models.clone(), eta: a.eta, loss: a.loss, agreement_tolerance: a.agreement_tolerance };
            let policy = registry.build(&a.policy, &params)?;
            apps.insert(
                name.clone(),
                Arc::new(AppRuntime { cfg: a.clone(), policy, threshold_bits: AtomicU64::new(a.confidence_threshold.to_bits()) }),
            );
        }
        let (feedback_tx, rx) = mpsc::channel(cfg.service.feedback_queue.max(1));
        let fe = Frontend {
            apps,
            layer,
            store,
            metrics,
            combine_margin: cfg.service.combine_margin,
            feedback_tx,
            config: Mutex::new(cfg),
            config_path,
        };
        Ok((Arc::new(fe), rx))
    }

    pub fn metrics(&self) -> &Arc<Metrics> {
        &self.metrics
    }

    pub fn layer(&self) -> &Arc<ModelLayer> {
        &self.layer
    }

    pub fn combine_margin(&self) -> Duration {
        self.combine_margin
    }

    pub fn app_config(&self, app: &str) -> Option<AppConfig> {
        self.apps.get(app).map(|a| a.cfg.clone())
    }

    fn app(&self, name: &str) -> Result<&Arc<AppRuntime>> {
        self.apps.get(name).ok_or_else(|| Error::UnknownApp(name.to_string()))
    }

    /// Current state bytes for a context, falling back to the app-wide
    /// snapshot under warm start and to the initial state otherwise.
    fn load_state(&self, app: &AppRuntime, context: &str) -> Result<Arc<[u8]>> {
        if let Some(s) = self.store.get(&app.cfg.name, context)? {
            return Ok(s);
        }
        if let Some(s) = self.warm_snapshot(app, context)? {
            return Ok(s);
        }
        Ok(app.policy.init_state().into())
    }

    fn warm_snapshot(&self, app: &AppRuntime, context: &str) -> Result<Option<Arc<[u8]>>> {
        if app.cfg.warm_start && !context.is_empty() {
            self.store.get(&app.cfg.name, "")
        } else {
            Ok(None)
        }
    }

    fn lookup(&self, model: &ModelName, input: &InputPayload, deadline: Instant) -> Lookup {
        self.metrics.inc("cache_requests_total");
        let key = CacheKey::new(model, input);
        self.layer.cache().request_wait(&key, |r| {
            if let Err(e) = self.layer.enqueue(model, r, deadline) {
                self.metrics.inc(&labeled("model_unavailable_total", "model", model.as_str()));
                tracing::debug!(error = %e, "no replica");
            }
        })
    }

    /// Answers one query by its deadline, with the default output if need be.
    pub async fn predict(&self, app: &str, context: &str, input: InputPayload) -> Result<Prediction> {
        let rt = self.app(app)?.clone();
        input.validate(rt.cfg.input_type)?;
        let query = Query::new(app, context, input, rt.cfg.slo)?;
        let state = self.load_state(&rt, context)?;
        let selected = rt.policy.select(&state, &query, &mut rand::rng())?;

        let combine_at = query.deadline.checked_sub(self.combine_margin + TIMER_SLACK).unwrap_or(query.recv_time).max(query.recv_time);
        let mut arrived = BTreeMap::new();
        let mut waiting: Vec<(ModelName, oneshot::Receiver<Output>)> = Vec::new();
        for m in &selected {
            match self.lookup(m, &query.input, query.deadline) {
                Lookup::Hit(out) => {
                    arrived.insert(m.clone(), out);
                }
                Lookup::Wait(rx) => waiting.push((m.clone(), rx)),
            }
        }
        let mut late = false;
        for (m, mut rx) in waiting {
            if late {
                if let Ok(out) = rx.try_recv() {
                    arrived.insert(m, out);
                }
                continue;
            }
            match tokio::time::timeout_at(combine_at.into(), &mut rx).await {
                Ok(Ok(out)) => {
                    arrived.insert(m, out);
                }
                Ok(Err(_)) => {}
                Err(_) => late = true,
            }
        }

        let prediction = rt.policy.combine_at_deadline(&state, &query, &selected, &arrived, &rt.rules())?;
        let latency = query.recv_time.elapsed();
        self.metrics.inc("predictions_total");
        self.metrics.add("models_missing_total", prediction.models_missing as u64);
        if prediction.models_missing > 0 {
            self.metrics.inc("predictions_with_missing_total");
        }
        if prediction.is_default {
            self.metrics.inc("predictions_default_total");
        }
        if Instant::now() > query.deadline + self.combine_margin {
            self.metrics.inc("deadline_misses_total");
        }
        self.metrics.predict_latency.observe(latency);
        Ok(Prediction { prediction, latency })
    }

    /// Queues feedback and returns at once; a full queue is a retryable error.
    pub fn feedback(&self, fb: Feedback) -> Result<()> {
        let rt = self.app(&fb.app)?;
        fb.input.validate(rt.cfg.input_type)?;
        match self.feedback_tx.try_send(fb) {
            Ok(()) => {
                self.metrics.inc("feedback_accepted_total");
                Ok(())
            }
            Err(mpsc::error::TrySendError::Full(_)) => {
                self.metrics.inc("feedback_rejected_total");
                Err(Error::QueueFull)
            }
            Err(mpsc::error::TrySendError::Closed(_)) => Err(Error::QueueFull),
        }
    }

    /// Drains the feedback queue until every sender is gone.
    pub async fn run_feedback(self: Arc<Self>, mut rx: mpsc::Receiver<Feedback>) {
        let slots = Arc::new(Semaphore::new(FEEDBACK_CONCURRENCY));
        while let Some(fb) = rx.recv().await {
            let Ok(permit) = slots.clone().acquire_owned().await else { break };
            let me = self.clone();
            tokio::spawn(async move {
                let _permit = permit;
                if let Err(e) = me.process_feedback(fb).await {
                    tracing::warn!(error = %e, "feedback dropped");
                    me.metrics.inc("feedback_failed_total");
                }
                me.metrics.inc("feedback_processed_total");
            });
        }
    }

    /// Joins a label with the models' predictions for the same input and
    /// folds it into the context's state. Predictions come from the cache
    /// when present and are computed otherwise, waiting at most one SLO.
    pub async fn process_feedback(&self, fb: Feedback) -> Result<()> {
        let rt = self.app(&fb.app)?.clone();
        fb.input.validate(rt.cfg.input_type)?;
        let query = Query::new(fb.app.as_str(), fb.context_id.as_str(), fb.input, rt.cfg.slo)?;
        let warm = self.warm_snapshot(&rt, &fb.context_id)?;
        let models = {
            let state = self.load_state(&rt, &fb.context_id)?;
            rt.policy.select(&state, &query, &mut rand::rng())?
        };

        let mut preds = BTreeMap::new();
        let mut waiting = Vec::new();
        for m in &models {
            let key = CacheKey::new(m, &query.input);
            if let Some(out) = self.layer.cache().fetch(&key) {
                preds.insert(m.clone(), out);
                continue;
            }
            match self.lookup(m, &query.input, query.deadline) {
                Lookup::Hit(out) => {
                    preds.insert(m.clone(), out);
                }
                Lookup::Wait(rx) => waiting.push((m.clone(), rx)),
            }
        }
        for (m, rx) in waiting {
            if let Ok(Ok(out)) = tokio::time::timeout_at(query.deadline.into(), rx).await {
                preds.insert(m, out);
            }
        }
        if preds.is_empty() {
            self.metrics.inc("feedback_unresolved_total");
            return Ok(());
        }

        let policy = rt.policy.clone();
        self.store.update(&fb.app, &fb.context_id, &mut |old| policy.observe(old.or(warm.as_deref()), &query, &fb.label, &preds))?;
        Ok(())
    }

    pub fn context_state(&self, app: &str, context: &str) -> Result<ContextState> {
        let rt = self.app(app)?;
        let stored = self.store.get(app, context)?;
        let bytes = match &stored {
            Some(s) => s.clone(),
            None => self.load_state(rt, context)?,
        };
        Ok(ContextState { policy: rt.policy.name().to_string(), stored: stored.is_some(), summary: rt.policy.summarize(&bytes)? })
    }

    /// Applies the reloadable fields of `new`; anything else is reported as
    /// needing a restart and left alone.
    pub fn apply_config(&self, new: &RuntimeConfig) -> HotChanges {
        let mut current = self.config.lock();
        let changes = current.hot_changes(new);
        for (app, t) in &changes.confidence_thresholds {
            if let (Some(rt), Some(c)) = (self.apps.get(app), current.apps.get_mut(app)) {
                rt.threshold_bits.store(t.to_bits(), Ordering::Relaxed);
                c.confidence_threshold = *t;
            }
        }
        for (model, d) in &changes.batch_delays {
            if let Some(c) = current.models.get_mut(model) {
                self.layer.set_batch_delay(model, *d);
                c.batch_delay = *d;
            }
        }
        changes
    }

    /// Re-reads the config file the service was started from.
    pub fn reload(&self) -> Result<HotChanges> {
        let path = self.config_path.as_ref().ok_or_else(|| Error::Config("service was not started from a config file".into()))?;
        let new = RuntimeConfig::load(path)?;
        Ok(self.apply_config(&new))
    }

    /// Metrics text including the cache counters.
    pub fn render_metrics(&self) -> String {
        let cache = self.layer.cache();
        let extra = vec![
            ("cache_hits".to_string(), cache.hits() as f64),
            ("cache_misses".to_string(), cache.misses() as f64),
            ("cache_evictions".to_string(), cache.evictions() as f64),
            ("cache_entries".to_string(), cache.len() as f64),
            ("context_states".to_string(), self.store.len() as f64),
            ("connected_replicas".to_string(), self.layer.replicas().len() as f64),
        ];
        self.metrics.render(&extra)
    }
}
