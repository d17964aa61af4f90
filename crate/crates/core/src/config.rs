//! TOML service configuration. Every rejection names the line it concerns.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;
use toml::Spanned;

use crate::batching::SizingStrategy;
use crate::error::{Error, Result};
use crate::loss::LossFn;
use crate::selection::{PolicyKind, StateStoreKind, DEFAULT_AGREEMENT_TOLERANCE};
use crate::types::{InputType, ModelName, Output};

pub const DEFAULT_CACHE_CAPACITY: usize = 65_536;
pub const DEFAULT_ETA: f64 = 0.1;
pub const DEFAULT_COMBINE_MARGIN: Duration = Duration::from_millis(1);
pub const DEFAULT_FEEDBACK_QUEUE: usize = 10_000;
pub const DEFAULT_REPLICA_TIMEOUT: Duration = Duration::from_secs(1);

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub listen_addr: String,
    pub container_port: u16,
    pub combine_margin: Duration,
    pub feedback_queue: usize,
    pub state_store: StateStoreKind,
    pub max_contexts: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            listen_addr: "127.0.0.1:1337".into(),
            container_port: 7000,
            combine_margin: DEFAULT_COMBINE_MARGIN,
            feedback_queue: DEFAULT_FEEDBACK_QUEUE,
            state_store: StateStoreKind::InMemory,
            max_contexts: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AppConfig {
    pub name: String,
    pub input_type: InputType,
    pub slo: Duration,
    pub policy: PolicyKind,
    pub eta: f64,
    pub default_output: Output,
    pub confidence_threshold: f64,
    pub loss: LossFn,
    pub agreement_tolerance: f64,
    pub models: Vec<ModelName>,
    pub warm_start: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub name: ModelName,
    pub batch_strategy: SizingStrategy,
    pub batch_delay: Duration,
    pub additive_step: u32,
    pub replica_timeout: Duration,
}

impl ModelConfig {
    pub fn new(name: ModelName) -> Self {
        ModelConfig {
            name,
            batch_strategy: SizingStrategy::Aimd,
            batch_delay: Duration::ZERO,
            additive_step: crate::batching::DEFAULT_ADDITIVE_STEP,
            replica_timeout: DEFAULT_REPLICA_TIMEOUT,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuntimeConfig {
    pub service: ServiceConfig,
    pub cache_capacity: usize,
    pub apps: BTreeMap<String, AppConfig>,
    pub models: BTreeMap<ModelName, ModelConfig>,
}

/// Fields that a reload may change on a running service.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HotChanges {
    pub confidence_thresholds: Vec<(String, f64)>,
    pub batch_delays: Vec<(ModelName, Duration)>,
    /// Something else differs as well; those edits need a restart.
    pub needs_restart: bool,
}

impl RuntimeConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| {
            let msg = e.message().trim_end().to_string();
            Error::Config(match e.span() {
                Some(span) => at(text, &span, &msg),
                None => msg,
            })
        })?;
        raw.validate(text)
    }

    pub fn app(&self, name: &str) -> Option<&AppConfig> {
        self.apps.get(name)
    }

    pub fn hot_changes(&self, new: &RuntimeConfig) -> HotChanges {
        let mut out = HotChanges::default();
        let mut cold_self = self.clone();
        for (name, app) in &new.apps {
            if let Some(old) = cold_self.apps.get_mut(name) {
                if old.confidence_threshold != app.confidence_threshold {
                    out.confidence_thresholds.push((name.clone(), app.confidence_threshold));
                    old.confidence_threshold = app.confidence_threshold;
                }
            }
        }
        for (name, model) in &new.models {
            if let Some(old) = cold_self.models.get_mut(name) {
                if old.batch_delay != model.batch_delay {
                    out.batch_delays.push((name.clone(), model.batch_delay));
                    old.batch_delay = model.batch_delay;
                }
            }
        }
        out.needs_restart = cold_self != *new;
        out
    }
}

fn position(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

fn at(text: &str, span: &Range<usize>, msg: &str) -> String {
    let (line, col) = position(text, span.start);
    format!("line {line}, column {col}: {msg}")
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    service: RawService,
    #[serde(default)]
    cache: RawCache,
    #[serde(default)]
    app: BTreeMap<String, Spanned<RawApp>>,
    #[serde(default)]
    model: BTreeMap<String, Spanned<RawModel>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawService {
    listen_addr: Option<String>,
    container_port: Option<Spanned<i64>>,
    combine_margin_ms: Option<Spanned<f64>>,
    feedback_queue: Option<Spanned<i64>>,
    state_store: Option<Spanned<String>>,
    state_dir: Option<String>,
    max_contexts: Option<Spanned<i64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCache {
    capacity: Option<Spanned<i64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawApp {
    slo_ms: Spanned<f64>,
    models: Spanned<Vec<String>>,
    input_type: Spanned<String>,
    default_output: String,
    policy: Option<Spanned<String>>,
    eta: Option<Spanned<f64>>,
    confidence_threshold: Option<Spanned<f64>>,
    loss: Option<Spanned<String>>,
    loss_scale: Option<Spanned<f64>>,
    agreement_tolerance: Option<Spanned<f64>>,
    warm_start: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    batch_strategy: Option<Spanned<String>>,
    max_batch: Option<Spanned<i64>>,
    batch_delay_ms: Option<Spanned<f64>>,
    additive_step: Option<Spanned<i64>>,
    replica_timeout_ms: Option<Spanned<f64>>,
}

fn millis(text: &str, v: &Spanned<f64>, key: &str, allow_zero: bool) -> Result<Duration> {
    let ms = *v.get_ref();
    let ok = ms.is_finite() && if allow_zero { ms >= 0.0 } else { ms > 0.0 };
    if !ok {
        let want = if allow_zero { "non-negative" } else { "positive" };
        return Err(Error::Config(at(text, &v.span(), &format!("{key} must be {want}, got {ms}"))));
    }
    Ok(Duration::from_secs_f64(ms / 1e3))
}

fn int_in(text: &str, v: &Spanned<i64>, key: &str, range: Range<i64>) -> Result<i64> {
    let n = *v.get_ref();
    if !range.contains(&n) {
        return Err(Error::Config(at(text, &v.span(), &format!("{key} must be in [{}, {}), got {n}", range.start, range.end))));
    }
    Ok(n)
}

impl RawConfig {
    fn validate(self, text: &str) -> Result<RuntimeConfig> {
        let err = |span: Range<usize>, msg: String| Error::Config(at(text, &span, &msg));
        let mut service = ServiceConfig::default();
        let s = self.service;
        if let Some(a) = s.listen_addr {
            service.listen_addr = a;
        }
        if let Some(p) = &s.container_port {
            service.container_port = int_in(text, p, "container_port", 0..65_536)? as u16;
        }
        if let Some(m) = &s.combine_margin_ms {
            service.combine_margin = millis(text, m, "combine_margin_ms", true)?;
        }
        if let Some(q) = &s.feedback_queue {
            service.feedback_queue = int_in(text, q, "feedback_queue", 1..i64::MAX)? as usize;
        }
        if let Some(m) = &s.max_contexts {
            service.max_contexts = int_in(text, m, "max_contexts", 1..i64::MAX)? as usize;
        }
        if let Some(kind) = &s.state_store {
            service.state_store = match kind.get_ref().as_str() {
                "memory" => StateStoreKind::InMemory,
                "file" => StateStoreKind::FileBacked(PathBuf::from(s.state_dir.as_deref().unwrap_or("predserve-state"))),
                other => return Err(err(kind.span(), format!("state_store must be \"memory\" or \"file\", got {other:?}"))),
            };
        }

        let cache_capacity = match &self.cache.capacity {
            Some(c) => int_in(text, c, "capacity", 0..i64::MAX)? as usize,
            None => DEFAULT_CACHE_CAPACITY,
        };

        let mut models = BTreeMap::new();
        for (name, raw) in &self.model {
            if name.is_empty() {
                return Err(err(raw.span(), "model name must not be empty".into()));
            }
            let m = raw.get_ref();
            let mut cfg = ModelConfig::new(ModelName::new(name));
            if let Some(step) = &m.additive_step {
                cfg.additive_step = int_in(text, step, "additive_step", 1..1 << 16)? as u32;
            }
            if let Some(d) = &m.batch_delay_ms {
                cfg.batch_delay = millis(text, d, "batch_delay_ms", true)?;
            }
            if let Some(t) = &m.replica_timeout_ms {
                cfg.replica_timeout = millis(text, t, "replica_timeout_ms", false)?;
            }
            cfg.batch_strategy = match m.batch_strategy.as_ref().map(|s| (s.get_ref().as_str(), s.span())) {
                None | Some(("aimd", _)) => SizingStrategy::Aimd,
                Some(("quantile", _)) => SizingStrategy::Quantile,
                Some(("fixed", span)) => match &m.max_batch {
                    Some(b) => SizingStrategy::Fixed(int_in(text, b, "max_batch", 1..1 << 16)? as u32),
                    None => return Err(err(span, format!("model {name}: fixed batch_strategy needs max_batch"))),
                },
                Some((other, span)) => {
                    return Err(err(span, format!("batch_strategy must be \"aimd\", \"quantile\" or \"fixed\", got {other:?}")))
                }
            };
            if let (Some(b), false) = (&m.max_batch, matches!(cfg.batch_strategy, SizingStrategy::Fixed(_))) {
                return Err(err(b.span(), format!("model {name}: max_batch only applies to the fixed strategy")));
            }
            models.insert(cfg.name.clone(), cfg);
        }

        let mut apps = BTreeMap::new();
        for (name, raw) in &self.app {
            if name.is_empty() {
                return Err(err(raw.span(), "app name must not be empty".into()));
            }
            let a = raw.get_ref();
            let slo = millis(text, &a.slo_ms, "slo_ms", false)?;
            let input_type: InputType = a
                .input_type
                .get_ref()
                .parse()
                .map_err(|_| err(a.input_type.span(), format!("unknown input_type {:?}", a.input_type.get_ref())))?;
            let policy = match &a.policy {
                Some(p) => p.get_ref().parse::<PolicyKind>().map_err(|e| match e {
                    Error::Config(m) => err(p.span(), m),
                    other => other,
                })?,
                None => PolicyKind::Exp4,
            };
            let eta = match &a.eta {
                Some(e) if !(*e.get_ref() > 0.0 && e.get_ref().is_finite()) => {
                    return Err(err(e.span(), format!("eta must be positive, got {}", e.get_ref())))
                }
                Some(e) => *e.get_ref(),
                None => DEFAULT_ETA,
            };
            let confidence_threshold = match &a.confidence_threshold {
                Some(c) if !(0.0..=1.0).contains(c.get_ref()) => {
                    return Err(err(c.span(), format!("confidence_threshold must be in [0, 1], got {}", c.get_ref())))
                }
                Some(c) => *c.get_ref(),
                None => 0.0,
            };
            let loss = match a.loss.as_ref().map(|l| (l.get_ref().as_str(), l.span())) {
                None | Some(("zero_one", _)) => LossFn::ZeroOne,
                Some(("clipped_absolute", _)) => {
                    let scale = match &a.loss_scale {
                        Some(s) if !(*s.get_ref() > 0.0 && s.get_ref().is_finite()) => {
                            return Err(err(s.span(), format!("loss_scale must be positive, got {}", s.get_ref())))
                        }
                        Some(s) => *s.get_ref(),
                        None => 1.0,
                    };
                    LossFn::ClippedAbsolute { scale }
                }
                Some((other, span)) => return Err(err(span, format!("loss must be \"zero_one\" or \"clipped_absolute\", got {other:?}"))),
            };
            let agreement_tolerance = match &a.agreement_tolerance {
                Some(t) if t.get_ref().is_nan() || *t.get_ref() < 0.0 => {
                    return Err(err(t.span(), format!("agreement_tolerance must be non-negative, got {}", t.get_ref())))
                }
                Some(t) => *t.get_ref(),
                None => DEFAULT_AGREEMENT_TOLERANCE,
            };
            let model_list = a.models.get_ref();
            if model_list.is_empty() {
                return Err(err(a.models.span(), format!("app {name}: models must not be empty")));
            }
            let mut seen = BTreeSet::new();
            for m in model_list {
                if !seen.insert(m.as_str()) {
                    return Err(err(a.models.span(), format!("app {name}: model {m:?} listed twice")));
                }
                if !models.contains_key(&ModelName::new(m)) {
                    return Err(err(a.models.span(), format!("app {name}: model {m:?} has no [model.{m}] block")));
                }
            }
            apps.insert(
                name.clone(),
                AppConfig {
                    name: name.clone(),
                    input_type,
                    slo,
                    policy,
                    eta,
                    default_output: Output::new(a.default_output.clone()),
                    confidence_threshold,
                    loss,
                    agreement_tolerance,
                    models: model_list.iter().map(ModelName::new).collect(),
                    warm_start: a.warm_start.unwrap_or(false),
                },
            );
        }

        Ok(RuntimeConfig { service, cache_capacity, apps, models })
    }
}
