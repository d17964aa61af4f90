//! Experiments on the virtual clock: batching and selection policies.

use std::time::Duration;

use predserve_core::batching::aimd::BACKOFF;
use predserve_core::batching::{SizingStrategy, DEFAULT_ADDITIVE_STEP, SLO_HEADROOM};
use predserve_core::sim::{
    generate_workload, replay_cache, run_ensemble_scenario, run_failure_scenario, Arrival, ArrivalProcess, BatchSimConfig, BatchSimReport,
    EnsembleReport, EnsembleScenario, FailureReport, FailureScenario, Popularity, SyntheticModelSpec, WorkloadEvent, WorkloadSpec,
};

use crate::config::{AimdConfig, BatchDelayConfig, BatchingConfig, CacheConfig, EnsembleConfig, FailureConfig};
use crate::report::{fmt, Check, Report, Table};

pub fn ms(x: f64) -> Duration {
    Duration::from_secs_f64(x / 1e3)
}

fn to_ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

pub fn profile(fixed_ms: f64, per_item_ms: f64, jitter_ms: f64) -> SyntheticModelSpec {
    let mut m = SyntheticModelSpec::with_latency(ms(fixed_ms), ms(per_item_ms));
    m.jitter = ms(jitter_ms);
    m
}

/// Largest batch whose mean latency fits in `bound`.
pub fn largest_batch_within(model: &SyntheticModelSpec, bound: Duration) -> u32 {
    if model.latency_per_item.is_zero() {
        return u32::MAX;
    }
    let room = bound.saturating_sub(model.latency_fixed).as_nanos();
    (room / model.latency_per_item.as_nanos()) as u32
}

fn latency_summary(t: &mut Table, prefix: &str, r: &BatchSimReport) {
    for (name, q) in [("p50", 0.5), ("p95", 0.95), ("p99", 0.99)] {
        t.push(vec![format!("{prefix}latency_{name}_ms"), fmt(to_ms(r.latency_quantile(q)))]);
    }
}

fn batch_rows(name: &str, r: &BatchSimReport) -> Table {
    let mut t = Table::new(name, &["start_ms", "batch_size", "latency_ms", "max_batch"]);
    for b in &r.batches {
        t.push(vec![fmt(to_ms(b.start)), b.size.to_string(), fmt(to_ms(b.latency)), b.max_batch.to_string()]);
    }
    t
}

pub struct AimdOutcome {
    pub optimum: u32,
    /// `[⌊backoff · optimum⌋, optimum + additive step]`
    pub band: (u32, u32),
    pub rate_qps: f64,
    pub slo: Duration,
    pub warmup: Duration,
    pub sim: BatchSimReport,
}

impl AimdOutcome {
    pub fn steady_range(&self) -> (u32, u32) {
        self.sim.max_batch_range_after(self.warmup).unwrap_or((0, 0))
    }

    pub fn within_slo(&self) -> f64 {
        self.sim.fraction_batches_within(self.slo)
    }

    pub fn report(&self) -> Report {
        let mut r = Report::new("aimd");
        let (lo, hi) = self.steady_range();
        let mut s = Table::new("summary", &["metric", "value"]);
        let over = self.sim.batches.iter().filter(|b| b.latency > self.slo).count();
        for (k, v) in [
            ("analytic_optimum", self.optimum as f64),
            ("offered_qps", self.rate_qps),
            ("throughput_qps", self.sim.throughput()),
            ("mean_batch_size", self.sim.mean_batch_size()),
            ("steady_max_batch_min", lo as f64),
            ("steady_max_batch_max", hi as f64),
            ("batches", self.sim.batches.len() as f64),
            ("batches_over_slo", over as f64),
        ] {
            s.push(vec![k.into(), fmt(v)]);
        }
        latency_summary(&mut s, "query_", &self.sim);
        r.tables.push(s);
        r.tables.push(batch_rows("batches", &self.sim));
        r.checks.push(Check::at_least("steady_max_batch_min", lo as f64, self.band.0 as f64));
        r.checks.push(Check::at_most("steady_max_batch_max", hi as f64, self.band.1 as f64));
        r.checks.push(Check::at_least("batches_within_slo", self.within_slo(), 0.99));
        r
    }
}

/// Poisson load just under the replica's capacity at the optimum, so the
/// queue keeps batches near full without growing without bound.
pub fn aimd(cfg: &AimdConfig, seed: u64) -> AimdOutcome {
    let model = profile(cfg.fixed_ms, cfg.per_item_ms, 0.0);
    let slo = ms(cfg.slo_ms);
    let optimum = largest_batch_within(&model, slo);
    let capacity = optimum as f64 / model.mean_batch_latency(optimum as usize).as_secs_f64();
    let rate_qps = cfg.load_fraction * capacity;
    let mut sc = BatchSimConfig::new(model, ArrivalProcess::Poisson { rate_qps }, SizingStrategy::Aimd, slo);
    sc.duration = Duration::from_secs_f64(cfg.duration_s);
    sc.seed = seed;
    let band = ((optimum as f64 * BACKOFF).floor() as u32, optimum + DEFAULT_ADDITIVE_STEP);
    AimdOutcome { optimum, band, rate_qps, slo, warmup: Duration::from_secs_f64(cfg.warmup_s), sim: simulate(&sc) }
}

fn simulate(cfg: &BatchSimConfig) -> BatchSimReport {
    predserve_core::sim::simulate_batching(cfg)
}

pub const STRATEGIES: [(&str, SizingStrategy); 3] =
    [("none", SizingStrategy::Fixed(1)), ("aimd", SizingStrategy::Aimd), ("quantile", SizingStrategy::Quantile)];

pub struct ComparisonRow {
    pub profile: String,
    pub strategy: &'static str,
    pub sim: BatchSimReport,
}

pub struct ComparisonOutcome {
    pub slo: Duration,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonOutcome {
    pub fn throughput(&self, profile: &str, strategy: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.profile == profile && r.strategy == strategy).map(|r| r.sim.throughput())
    }

    pub fn report(&self) -> Report {
        let mut r = Report::new("batching-comparison");
        let mut t =
            Table::new("throughput", &["profile", "strategy", "throughput_qps", "mean_batch_size", "batch_p99_ms", "batches_over_slo"]);
        for row in &self.rows {
            let lat: Vec<Duration> = row.sim.batches.iter().map(|b| b.latency).collect();
            let over = lat.iter().filter(|l| **l > self.slo).count();
            t.push(vec![
                row.profile.clone(),
                row.strategy.into(),
                fmt(row.sim.throughput()),
                fmt(row.sim.mean_batch_size()),
                fmt(to_ms(predserve_core::sim::quantile(&lat, 0.99))),
                over.to_string(),
            ]);
        }
        r.tables.push(t);
        if let Some(p) = self.rows.first().map(|r| r.profile.clone()) {
            let get = |s| self.throughput(&p, s).unwrap_or(0.0);
            let (none, aimd, quant) = (get("none"), get("aimd"), get("quantile"));
            r.checks.push(Check::at_least(&format!("{p}_aimd_speedup"), aimd / none, 5.0));
            r.checks.push(Check::at_least(&format!("{p}_quantile_speedup"), quant / none, 5.0));
            r.checks.push(Check::at_most(&format!("{p}_adaptive_gap"), (aimd - quant).abs() / aimd.max(quant), 0.15));
        }
        r
    }
}

/// Saturated load; the first profile carries the thresholds.
pub fn batching_comparison(cfg: &BatchingConfig, seed: u64) -> ComparisonOutcome {
    let slo = ms(cfg.slo_ms);
    let mut rows = Vec::new();
    for (name, fixed, per_item, jitter) in &cfg.profiles {
        for (strategy, sizing) in STRATEGIES {
            let mut sc =
                BatchSimConfig::new(profile(*fixed, *per_item, *jitter), ArrivalProcess::Saturated, sizing, slo.mul_f64(SLO_HEADROOM));
            sc.duration = Duration::from_secs_f64(cfg.duration_s);
            sc.seed = seed;
            rows.push(ComparisonRow { profile: name.clone(), strategy, sim: simulate(&sc) });
        }
    }
    ComparisonOutcome { slo, rows }
}

pub struct DelayOutcome {
    pub runs: Vec<(f64, BatchSimReport)>,
}

impl DelayOutcome {
    /// Served queries per busy second of the replica: the rate it could
    /// sustain with the batch sizes this load produces.
    pub fn capacity_ratio(&self) -> f64 {
        match (self.runs.first(), self.runs.last()) {
            (Some((_, a)), Some((_, b))) => b.efficiency() / a.efficiency(),
            _ => 0.0,
        }
    }

    pub fn served_ratio(&self) -> f64 {
        match (self.runs.first(), self.runs.last()) {
            (Some((_, a)), Some((_, b))) => b.throughput() / a.throughput(),
            _ => 0.0,
        }
    }

    pub fn report(&self) -> Report {
        let mut r = Report::new("batch-delay");
        let mut t = Table::new(
            "runs",
            &["delay_ms", "served_qps", "capacity_qps", "mean_batch_size", "latency_p50_ms", "latency_p99_ms", "expired"],
        );
        for (d, s) in &self.runs {
            t.push(vec![
                fmt(*d),
                fmt(s.throughput()),
                fmt(s.efficiency()),
                fmt(s.mean_batch_size()),
                fmt(to_ms(s.latency_quantile(0.5))),
                fmt(to_ms(s.latency_quantile(0.99))),
                s.expired.to_string(),
            ]);
        }
        r.tables.push(t);
        let mut s = Table::new("summary", &["metric", "value"]);
        s.push(vec!["served_ratio".into(), fmt(self.served_ratio())]);
        s.push(vec!["capacity_ratio".into(), fmt(self.capacity_ratio())]);
        r.tables.push(s);
        r.checks.push(Check::at_least("throughput_ratio", self.capacity_ratio(), 1.5));
        r
    }
}

/// Open-loop Poisson load, once per configured delay; the first and last
/// delays are compared.
pub fn batch_delay(cfg: &BatchDelayConfig, seed: u64) -> DelayOutcome {
    let slo = ms(cfg.slo_ms);
    let runs = cfg
        .delays_ms
        .iter()
        .map(|&d| {
            let model = profile(cfg.fixed_ms, cfg.per_item_ms, 0.0);
            let arrivals = ArrivalProcess::Poisson { rate_qps: cfg.rate_qps };
            let mut sc = BatchSimConfig::new(model, arrivals, SizingStrategy::Aimd, slo.mul_f64(SLO_HEADROOM));
            sc.query_slo = Some(slo);
            sc.batch_delay = ms(d);
            sc.duration = Duration::from_secs_f64(cfg.duration_s);
            sc.seed = seed;
            (d, simulate(&sc))
        })
        .collect();
    DelayOutcome { runs }
}

pub struct FailureOutcome {
    pub window: (u64, u64),
    pub tolerance: f64,
    pub sim: FailureReport,
}

impl FailureOutcome {
    pub fn report(&self) -> Report {
        let mut r = Report::new("model-failure");
        let k = self.sim.last().static_models.len();
        let mut header: Vec<String> = vec!["query".into()];
        header.extend((0..k).map(|i| format!("static_{i}")));
        header.extend(["exp3".into(), "exp4".into()]);
        let mut t = Table { name: "curve".into(), header, rows: Vec::new() };
        for p in &self.sim.curve {
            let mut row = vec![p.query.to_string()];
            row.extend(p.static_models.iter().map(|&e| fmt(e)));
            row.extend([fmt(p.exp3), fmt(p.exp4)]);
            t.push(row);
        }
        r.tables.push(t);

        let last = self.sim.last();
        let best_static = last.static_models.iter().copied().fold(f64::INFINITY, f64::min);
        r.checks.push(Check::below("exp3_final_error", last.exp3, best_static));
        r.checks.push(Check::below("exp4_final_error", last.exp4, best_static));
        if let Some(pre) = self.sim.at(self.window.0) {
            let best = pre.static_models.iter().copied().fold(f64::INFINITY, f64::min);
            r.checks.push(Check::at_most("exp3_pre_window_error", pre.exp3, best + self.tolerance));
            r.checks.push(Check::at_most("exp4_pre_window_error", pre.exp4, best + self.tolerance));
        }
        r
    }
}

pub fn failure_scenario(cfg: &FailureConfig, seed: u64) -> FailureScenario {
    let best = cfg.error_rates.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map_or(0, |(i, _)| i);
    FailureScenario {
        error_rates: cfg.error_rates.clone(),
        degradation: Some((best, cfg.degraded_rate, cfg.window.0..cfg.window.1)),
        labels: cfg.labels,
        queries: cfg.queries,
        eta: cfg.eta,
        seed,
        checkpoint_every: cfg.checkpoint_every,
    }
}

pub fn model_failure(cfg: &FailureConfig, seed: u64) -> FailureOutcome {
    FailureOutcome { window: cfg.window, tolerance: cfg.pre_window_tolerance, sim: run_failure_scenario(&failure_scenario(cfg, seed)) }
}

pub struct EnsembleOutcome {
    pub error_rate: f64,
    pub margin: f64,
    pub main: (f64, EnsembleReport),
    pub compare: Vec<(f64, EnsembleReport)>,
}

impl EnsembleOutcome {
    pub fn report(&self) -> Report {
        let mut r = Report::new("ensemble");
        let mut t = Table::new("by_eta", &["eta", "error", "unanimous_error", "unanimous_fraction", "mean_single_model_error"]);
        for (eta, e) in std::iter::once(&self.main).chain(&self.compare) {
            let single = e.single_model_errors.iter().sum::<f64>() / e.single_model_errors.len().max(1) as f64;
            t.push(vec![fmt(*eta), fmt(e.error), fmt(e.unanimous_error), fmt(e.unanimous_fraction), fmt(single)]);
        }
        r.tables.push(t);
        let mut b = Table::new("by_agreement", &["agreeing", "queries", "wrong", "error"]);
        for a in &self.main.1.by_agreement {
            let err = if a.queries == 0 { 0.0 } else { a.wrong as f64 / a.queries as f64 };
            b.push(vec![a.agreeing.to_string(), a.queries.to_string(), a.wrong.to_string(), fmt(err)]);
        }
        r.tables.push(b);
        let e = &self.main.1;
        r.checks.push(Check::below("ensemble_error", e.error, self.error_rate - self.margin));
        r.checks.push(Check::below("unanimous_error", e.unanimous_error, e.error));
        r
    }
}

pub fn ensemble_scenario(cfg: &EnsembleConfig, eta: f64, seed: u64) -> EnsembleScenario {
    EnsembleScenario { models: cfg.models, error_rate: cfg.error_rate, labels: cfg.labels, queries: cfg.queries, eta, seed }
}

pub fn ensemble(cfg: &EnsembleConfig, seed: u64) -> EnsembleOutcome {
    let run = |eta| (eta, run_ensemble_scenario(&ensemble_scenario(cfg, eta, seed)));
    EnsembleOutcome {
        error_rate: cfg.error_rate,
        margin: cfg.margin,
        main: run(cfg.eta),
        compare: cfg.compare_etas.iter().map(|&e| run(e)).collect(),
    }
}

pub fn zipf_workload(cfg: &CacheConfig, seed: u64) -> Vec<WorkloadEvent> {
    let spec = WorkloadSpec {
        arrival: Arrival::Poisson { rate_qps: 1_000.0 },
        queries: cfg.queries,
        feedback_fraction: 0.0,
        popularity: Popularity::Zipf { exponent: cfg.zipf_exponent, universe: cfg.universe },
    };
    generate_workload(&spec, seed).expect("valid workload spec")
}

pub struct HitRateOutcome {
    pub rows: Vec<(usize, f64)>,
}

impl HitRateOutcome {
    pub fn report(&self) -> Report {
        let mut r = Report::new("cache");
        let mut t = Table::new("hit_rate", &["capacity", "hit_rate"]);
        for (c, h) in &self.rows {
            t.push(vec![c.to_string(), fmt(*h)]);
        }
        r.tables.push(t);
        r
    }
}

pub fn cache_hit_rates(cfg: &CacheConfig, seed: u64) -> HitRateOutcome {
    let events = zipf_workload(cfg, seed);
    HitRateOutcome { rows: cfg.capacities.iter().map(|&c| (c, replay_cache(&events, c).hit_rate())).collect() }
}
