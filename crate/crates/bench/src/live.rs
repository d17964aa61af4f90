//! Experiments against a running server on loopback, with synthetic
//! containers speaking the wire protocol from their own threads.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use predserve_core::config::RuntimeConfig;
use predserve_core::sim::{
    generate_workload, quantile, synthetic_input, Arrival, Popularity, SyntheticModelSpec, WorkloadEvent, WorkloadSpec,
};
use predserve_core::{Error, Feedback, InputType, ModelName, Output, Result};
use predserve_server::container::{spawn_container, ContainerHandle, ContainerOptions, SyntheticModel};
use predserve_server::frontend::{Frontend, Prediction};
use predserve_server::{start, RunningServer, ServerOptions};
use tokio::runtime::Runtime;

use crate::config::{CacheConfig, FaultConfig, StragglerConfig};
use crate::report::{fmt, Check, Report, Table};
use crate::simulated::{ms, profile};

const APP: &str = "bench";

fn runtime() -> Result<Runtime> {
    tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(|e| Error::Config(format!("cannot start runtime: {e}")))
}

struct AppSpec<'a> {
    slo_ms: f64,
    models: &'a [String],
    combine_margin_ms: f64,
    feedback_queue: usize,
}

fn config(a: &AppSpec) -> Result<RuntimeConfig> {
    let list: Vec<String> = a.models.iter().map(|m| format!("\"{m}\"")).collect();
    let mut text = format!(
        "[service]\nlisten_addr = \"127.0.0.1:0\"\ncontainer_port = 0\ncombine_margin_ms = {}\nfeedback_queue = {}\n\n\
         [app.{APP}]\nslo_ms = {}\ninput_type = \"doubles\"\ndefault_output = \"none\"\npolicy = \"exp4\"\n\
         confidence_threshold = 0.0\nmodels = [{}]\n",
        a.combine_margin_ms,
        a.feedback_queue,
        a.slo_ms,
        list.join(", ")
    );
    for m in a.models {
        text.push_str(&format!("\n[model.{m}]\nbatch_strategy = \"aimd\"\n"));
    }
    RuntimeConfig::from_toml_str(&text)
}

fn synthetic(server: &RunningServer, name: &str, spec: SyntheticModelSpec) -> ContainerHandle {
    spawn_container(
        Box::new(SyntheticModel::new(spec)),
        ContainerOptions { core_addr: server.container_addr, name: name.into(), version: 1, input_type: InputType::Doubles },
    )
}

async fn wait_for_replicas(server: &RunningServer, models: &[String]) -> Result<()> {
    let start = Instant::now();
    for m in models {
        let name = ModelName::new(m.as_str());
        while server.frontend.layer().replica_count(&name) < 1 {
            if start.elapsed() > Duration::from_secs(10) {
                return Err(Error::ModelUnavailable(name));
            }
            tokio::time::sleep(Duration::from_millis(5)).await;
        }
    }
    Ok(())
}

fn truth_of(q: u64, labels: usize) -> usize {
    // splitmix-style scramble so labels do not follow the query index
    let mut z = q.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    ((z ^ (z >> 31)) % labels.max(1) as u64) as usize
}

/// Issues `queries` predictions in waves of `concurrency`.
async fn waves(fe: &Arc<Frontend>, first: u64, queries: u64, concurrency: u64, labels: usize) -> Result<Vec<(u64, usize, Prediction)>> {
    let mut out = Vec::with_capacity(queries as usize);
    let mut q = first;
    while q < first + queries {
        let n = concurrency.min(first + queries - q);
        let calls: Vec<_> = (q..q + n)
            .map(|i| {
                let fe = fe.clone();
                let truth = truth_of(i, labels);
                tokio::spawn(async move { fe.predict(APP, "", synthetic_input(i, truth)).await.map(|p| (i, truth, p)) })
            })
            .collect();
        for c in calls {
            out.push(c.await.map_err(|e| Error::Config(format!("query task failed: {e}")))??);
        }
        q += n;
    }
    Ok(out)
}

/// Issues one prediction per event at its scheduled offset, without waiting
/// for earlier ones.
async fn open_loop(fe: &Arc<Frontend>, events: &[WorkloadEvent], first: u64, labels: usize) -> Result<Vec<(u64, usize, Prediction)>> {
    let start = tokio::time::Instant::now();
    let mut calls = Vec::with_capacity(events.len());
    for e in events {
        tokio::time::sleep_until(start + e.at).await;
        let fe = fe.clone();
        let q = first + e.item;
        let truth = truth_of(q, labels);
        calls.push(tokio::spawn(async move { fe.predict(APP, "", synthetic_input(q, truth)).await.map(|p| (q, truth, p)) }));
    }
    let mut out = Vec::with_capacity(calls.len());
    for c in calls {
        out.push(c.await.map_err(|e| Error::Config(format!("query task failed: {e}")))??);
    }
    Ok(out)
}

/// One configuration of the straggler experiment.
#[derive(Debug, Clone)]
pub struct StragglerRun {
    pub size: usize,
    /// `deadline`, `full` (no slow member) or `blocking` (SLO long enough to wait for everyone).
    pub mode: &'static str,
    pub slo: Duration,
    pub latencies: Vec<Duration>,
    pub missing: Vec<u32>,
    pub correct: Vec<bool>,
    pub defaults: u64,
    pub elapsed: Duration,
    pub server_predictions: u64,
}

impl StragglerRun {
    pub fn p99(&self) -> Duration {
        quantile(&self.latencies, 0.99)
    }

    pub fn missing_fraction(&self) -> f64 {
        self.missing.iter().filter(|&&m| m >= 1).count() as f64 / self.missing.len().max(1) as f64
    }

    pub fn accuracy(&self) -> f64 {
        self.correct.iter().filter(|&&c| c).count() as f64 / self.correct.len().max(1) as f64
    }

    /// Relative gap between answers counted here and the server's counter.
    pub fn counter_gap(&self) -> f64 {
        let n = self.latencies.len() as f64;
        (n - self.server_predictions as f64).abs() / n.max(1.0)
    }
}

pub struct StragglerOutcome {
    pub slo: Duration,
    pub margin: Duration,
    pub max_accuracy_drop: f64,
    pub min_missing_fraction: f64,
    pub runs: Vec<StragglerRun>,
}

impl StragglerOutcome {
    pub fn run(&self, size: usize, mode: &str) -> Option<&StragglerRun> {
        self.runs.iter().find(|r| r.size == size && r.mode == mode)
    }

    pub fn report(&self) -> Report {
        let mut r = Report::new("stragglers");
        let mut rows = Table::new("queries", &["size", "mode", "query", "latency_ms", "models_missing", "correct"]);
        let mut sum = Table::new(
            "summary",
            &["size", "mode", "queries", "p50_ms", "p95_ms", "p99_ms", "missing_fraction", "accuracy", "defaults", "throughput_qps"],
        );
        for run in &self.runs {
            for (i, ((l, m), c)) in run.latencies.iter().zip(&run.missing).zip(&run.correct).enumerate() {
                rows.push(vec![
                    run.size.to_string(),
                    run.mode.into(),
                    i.to_string(),
                    fmt(l.as_secs_f64() * 1e3),
                    m.to_string(),
                    c.to_string(),
                ]);
            }
            sum.push(vec![
                run.size.to_string(),
                run.mode.into(),
                run.latencies.len().to_string(),
                fmt(quantile(&run.latencies, 0.5).as_secs_f64() * 1e3),
                fmt(quantile(&run.latencies, 0.95).as_secs_f64() * 1e3),
                fmt(run.p99().as_secs_f64() * 1e3),
                fmt(run.missing_fraction()),
                fmt(run.accuracy()),
                run.defaults.to_string(),
                fmt(run.latencies.len() as f64 / run.elapsed.as_secs_f64()),
            ]);
        }
        r.tables.push(rows);
        r.tables.push(sum);

        let bound = (self.slo + self.margin).as_secs_f64() * 1e3;
        for run in self.runs.iter().filter(|r| r.mode == "deadline") {
            let n = run.size;
            r.checks.push(Check::at_most(&format!("size_{n}_p99_ms"), run.p99().as_secs_f64() * 1e3, bound));
            r.checks.push(Check::at_least(&format!("size_{n}_missing_fraction"), run.missing_fraction(), self.min_missing_fraction));
        }
        for run in &self.runs {
            r.checks.push(Check::at_most(&format!("size_{}_{}_counter_gap", run.size, run.mode), run.counter_gap(), 0.01));
        }
        if let Some(n) = self.runs.iter().map(|r| r.size).max() {
            if let (Some(s), Some(f)) = (self.run(n, "deadline"), self.run(n, "full")) {
                r.checks.push(Check::at_most(&format!("size_{n}_accuracy_drop"), f.accuracy() - s.accuracy(), self.max_accuracy_drop));
            }
        }
        r
    }
}

async fn straggler_run(
    cfg: &StragglerConfig,
    seed: u64,
    size: usize,
    mode: &'static str,
) -> Result<(StragglerRun, Vec<ContainerHandle>, RunningServer)> {
    let models: Vec<String> = (0..size).map(|i| format!("m{i}")).collect();
    let slow_latency = cfg.slo_ms * cfg.slow_factor;
    let slo_ms = if mode == "blocking" { slow_latency * 100.0 } else { cfg.slo_ms };
    let cfg_text = AppSpec { slo_ms, models: &models, combine_margin_ms: cfg.combine_margin_ms, feedback_queue: 1_000 };
    let server = start(ServerOptions::new(config(&cfg_text)?)).await?;
    let mut handles = Vec::new();
    for (i, m) in models.iter().enumerate() {
        let slow = mode != "full" && i + 1 == size;
        let fixed = if slow { slow_latency } else { cfg.member_fixed_ms };
        let spec = profile(fixed, 0.01, 0.0)
            .with_labels(cfg.labels)
            .with_error(cfg.member_error, seed.wrapping_mul(1_000).wrapping_add(i as u64 + 1));
        handles.push(synthetic(&server, m, spec));
    }
    wait_for_replicas(&server, &models).await?;

    let fe = server.frontend.clone();
    let queries = if mode == "blocking" { cfg.blocking_queries } else { cfg.queries };
    let spec = WorkloadSpec {
        arrival: Arrival::Poisson { rate_qps: cfg.rate_qps },
        queries,
        feedback_fraction: 0.0,
        popularity: Popularity::UniqueEach,
    };
    let events = generate_workload(&spec, seed)?;
    let before = fe.metrics().counter("predictions_total");
    let started = Instant::now();
    let answers = open_loop(&fe, &events, seed.wrapping_mul(1_000_000), cfg.labels).await?;
    let elapsed = started.elapsed();
    let server_predictions = fe.metrics().counter("predictions_total") - before;

    let mut run = StragglerRun {
        size,
        mode,
        slo: ms(slo_ms),
        latencies: Vec::new(),
        missing: Vec::new(),
        correct: Vec::new(),
        defaults: 0,
        elapsed,
        server_predictions,
    };
    for (_, truth, p) in answers {
        run.latencies.push(p.latency);
        run.missing.push(p.prediction.models_missing);
        run.correct.push(p.prediction.output.value() == truth.to_string());
        run.defaults += p.prediction.is_default as u64;
    }
    Ok((run, handles, server))
}

/// For each size: the deadline-bound ensemble with one slow member, the same
/// ensemble with every member fast, and a blocking run that waits for all.
pub fn stragglers(cfg: &StragglerConfig, seed: u64) -> Result<StragglerOutcome> {
    let rt = runtime()?;
    let mut runs = Vec::new();
    for &size in &cfg.sizes {
        for mode in ["deadline", "full", "blocking"] {
            let (run, handles, server) = rt.block_on(straggler_run(cfg, seed, size, mode))?;
            drop(server);
            drop(handles);
            runs.push(run);
        }
    }
    Ok(StragglerOutcome {
        slo: ms(cfg.slo_ms),
        margin: ms(cfg.combine_margin_ms),
        max_accuracy_drop: cfg.max_accuracy_drop,
        min_missing_fraction: cfg.min_missing_fraction,
        runs,
    })
}

/// A prediction tagged with the fault phase it was issued in.
#[derive(Debug, Clone)]
pub struct FaultAnswer {
    pub phase: &'static str,
    pub query: u64,
    pub latency: Duration,
    pub models_missing: u32,
    pub is_default: bool,
}

pub struct FaultOutcome {
    pub slo: Duration,
    pub margin: Duration,
    pub issued: u64,
    pub answers: Vec<FaultAnswer>,
    pub flaps: u64,
    pub deadline_misses: u64,
}

impl FaultOutcome {
    pub fn on_time_fraction(&self) -> f64 {
        let bound = self.slo + self.margin;
        self.answers.iter().filter(|a| a.latency <= bound).count() as f64 / self.issued.max(1) as f64
    }

    pub fn report(&self) -> Report {
        let mut r = Report::new("faults");
        let mut t = Table::new("queries", &["phase", "query", "latency_ms", "models_missing", "is_default"]);
        for a in &self.answers {
            t.push(vec![
                a.phase.into(),
                a.query.to_string(),
                fmt(a.latency.as_secs_f64() * 1e3),
                a.models_missing.to_string(),
                a.is_default.to_string(),
            ]);
        }
        r.tables.push(t);
        let lat: Vec<Duration> = self.answers.iter().map(|a| a.latency).collect();
        let mut s = Table::new("summary", &["metric", "value"]);
        for (k, v) in [
            ("issued", self.issued as f64),
            ("answered", self.answers.len() as f64),
            ("p99_ms", quantile(&lat, 0.99).as_secs_f64() * 1e3),
            ("max_ms", lat.iter().max().copied().unwrap_or_default().as_secs_f64() * 1e3),
            ("flaps", self.flaps as f64),
            ("deadline_misses", self.deadline_misses as f64),
        ] {
            s.push(vec![k.into(), fmt(v)]);
        }
        r.tables.push(s);
        r.checks.push(Check::at_least("answered_by_deadline", self.on_time_fraction(), 1.0));
        r.checks.push(Check::at_most("server_deadline_misses", self.deadline_misses as f64, 0.0));
        r
    }
}

async fn fault_run(cfg: &FaultConfig, seed: u64) -> Result<(FaultOutcome, Vec<ContainerHandle>, RunningServer)> {
    let models: Vec<String> = ["fast", "slow", "flaky", "doomed"].map(String::from).to_vec();
    let spec = AppSpec { slo_ms: cfg.slo_ms, models: &models, combine_margin_ms: 1.0, feedback_queue: 1_000 };
    let mut opts = ServerOptions::new(config(&spec)?);
    opts.transport.heartbeat_interval = Duration::from_millis(100);
    let server = start(opts).await?;
    let member = |fixed: f64, i: u64| profile(fixed, 0.01, 0.0).with_labels(10).with_error(0.1, seed.wrapping_add(i));
    let fast = synthetic(&server, "fast", member(1.0, 1));
    let slow = synthetic(&server, "slow", member(10.0 * cfg.slo_ms, 2));
    let flaky = Arc::new(synthetic(&server, "flaky", member(1.0, 3)));
    let doomed = synthetic(&server, "doomed", member(2.0, 4));
    wait_for_replicas(&server, &models).await?;
    let fe = server.frontend.clone();

    let mut answers = Vec::new();
    let mut issued = 0;
    let mut record = |phase: &'static str, got: Vec<(u64, usize, Prediction)>| {
        issued += got.len() as u64;
        for (q, _, p) in got {
            answers.push(FaultAnswer {
                phase,
                query: q,
                latency: p.latency,
                models_missing: p.prediction.models_missing,
                is_default: p.prediction.is_default,
            });
        }
    };
    record("healthy", waves(&fe, 0, cfg.burst, cfg.burst, 10).await?);

    let kill = tokio::task::spawn_blocking(move || doomed.kill());
    record("kill", waves(&fe, 10_000, cfg.burst, cfg.burst, 10).await?);
    kill.await.map_err(|e| Error::Config(format!("kill task failed: {e}")))?;

    let stop = Arc::new(AtomicBool::new(false));
    let flapper = {
        let (stop, flaky, every) = (stop.clone(), flaky.clone(), Duration::from_millis(cfg.flap_every_ms));
        tokio::task::spawn_blocking(move || {
            while !stop.load(Ordering::Relaxed) {
                std::thread::sleep(every);
                flaky.drop_connection();
            }
        })
    };
    let until = Instant::now() + Duration::from_millis(cfg.flap_duration_ms);
    let mut round = 0;
    while Instant::now() < until {
        record("flap", waves(&fe, 20_000 + round * 1_000, cfg.burst, cfg.burst, 10).await?);
        round += 1;
    }
    stop.store(true, Ordering::Relaxed);
    let _ = flapper.await;

    let outcome = FaultOutcome {
        slo: ms(cfg.slo_ms),
        margin: fe.combine_margin(),
        issued,
        answers,
        flaps: flaky.connects().saturating_sub(1),
        deadline_misses: fe.metrics().counter("deadline_misses_total"),
    };
    let flaky = Arc::try_unwrap(flaky).map_err(|_| Error::Config("flaky container still shared".into()))?;
    Ok((outcome, vec![fast, slow, flaky], server))
}

/// Queries keep their deadline while one container is killed and another
/// has its connection dropped repeatedly; a slow member never answers in time.
pub fn faults(cfg: &FaultConfig, seed: u64) -> Result<FaultOutcome> {
    let rt = runtime()?;
    let (outcome, handles, server) = rt.block_on(fault_run(cfg, seed))?;
    drop(server);
    drop(handles);
    Ok(outcome)
}

pub struct FeedbackOutcome {
    pub items: u64,
    pub hot_rate: f64,
    pub cold_rate: f64,
}

impl FeedbackOutcome {
    pub fn report(&self) -> Report {
        let mut r = Report::new("cache");
        let mut t = Table::new("feedback", &["phase", "items", "per_second"]);
        t.push(vec!["hot".into(), self.items.to_string(), fmt(self.hot_rate)]);
        t.push(vec!["cold".into(), self.items.to_string(), fmt(self.cold_rate)]);
        r.tables.push(t);
        r.checks.push(Check::above("hot_over_cold_feedback", self.hot_rate / self.cold_rate, 1.0));
        r
    }
}

async fn drain_feedback(fe: &Frontend, target: u64) -> Result<()> {
    let start = Instant::now();
    while fe.metrics().counter("feedback_processed_total") < target {
        if start.elapsed() > Duration::from_secs(120) {
            return Err(Error::Config("feedback pipeline stalled".into()));
        }
        tokio::time::sleep(Duration::from_millis(2)).await;
    }
    Ok(())
}

async fn feedback_rate(fe: &Frontend, range: std::ops::Range<u64>, already: u64) -> Result<f64> {
    let n = range.end - range.start;
    let start = Instant::now();
    for q in range {
        let fb = Feedback { app: APP.into(), context_id: String::new(), input: synthetic_input(q, 1), label: Output::new("1") };
        fe.feedback(fb)?;
    }
    drain_feedback(fe, already + n).await?;
    Ok(n as f64 / start.elapsed().as_secs_f64())
}

async fn feedback_run(cfg: &CacheConfig, seed: u64) -> Result<(FeedbackOutcome, Vec<ContainerHandle>, RunningServer)> {
    let models: Vec<String> = vec!["a".into(), "b".into()];
    let n = cfg.feedback_items;
    let spec = AppSpec { slo_ms: 200.0, models: &models, combine_margin_ms: 1.0, feedback_queue: (2 * n) as usize };
    let server = start(ServerOptions::new(config(&spec)?)).await?;
    let handles: Vec<ContainerHandle> = models
        .iter()
        .enumerate()
        .map(|(i, m)| synthetic(&server, m, profile(2.0, 0.01, 0.0).with_labels(10).with_error(0.1, seed.wrapping_add(i as u64))))
        .collect();
    wait_for_replicas(&server, &models).await?;
    let fe = server.frontend.clone();

    let hot = 0..n;
    for chunk in hot.clone().collect::<Vec<_>>().chunks(200) {
        let calls: Vec<_> = chunk
            .iter()
            .map(|&q| {
                let fe = fe.clone();
                tokio::spawn(async move { fe.predict(APP, "", synthetic_input(q, 1)).await })
            })
            .collect();
        for c in calls {
            c.await.map_err(|e| Error::Config(format!("query task failed: {e}")))??;
        }
    }
    let hot_rate = feedback_rate(&fe, hot, 0).await?;
    let cold_rate = feedback_rate(&fe, n..2 * n, n).await?;
    Ok((FeedbackOutcome { items: n, hot_rate, cold_rate }, handles, server))
}

/// Feedback whose predictions are still cached against feedback that has to
/// re-run every model first.
pub fn cache_feedback(cfg: &CacheConfig, seed: u64) -> Result<FeedbackOutcome> {
    let rt = runtime()?;
    let (outcome, handles, server) = rt.block_on(feedback_run(cfg, seed))?;
    drop(server);
    drop(handles);
    Ok(outcome)
}
