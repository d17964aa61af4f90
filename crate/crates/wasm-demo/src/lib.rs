//! Browser bindings for the offline simulators. Results come back as flat
//! `Float64Array`s with a fixed row stride, documented per function.

use std::time::Duration;

use predserve_core::batching::SizingStrategy;
use predserve_core::sim::{
    generate_workload, replay_cache, run_failure_scenario, simulate_batching, Arrival, ArrivalProcess, BatchSimConfig, FailureScenario,
    Popularity, SyntheticModelSpec, WorkloadSpec,
};
use wasm_bindgen::prelude::*;

fn ms(x: f64) -> Duration {
    Duration::from_secs_f64(x.max(0.0) / 1e3)
}

fn strategy(name: &str) -> Result<SizingStrategy, JsError> {
    match name {
        "aimd" => Ok(SizingStrategy::Aimd),
        "quantile" => Ok(SizingStrategy::Quantile),
        "none" => Ok(SizingStrategy::Fixed(1)),
        other => Err(JsError::new(&format!("unknown strategy {other:?}"))),
    }
}

/// Batch sizing under saturated load for `seconds` of virtual time.
///
/// Rows of 4: `start_ms, batch_size, latency_ms, max_batch`.
#[wasm_bindgen]
pub fn batch_trace(
    fixed_ms: f64,
    per_item_ms: f64,
    slo_ms: f64,
    strategy_name: &str,
    seconds: f64,
    seed: u64,
) -> Result<Vec<f64>, JsError> {
    if !(slo_ms > 0.0 && seconds > 0.0 && seconds <= 120.0) {
        return Err(JsError::new("need slo > 0 and 0 < seconds <= 120"));
    }
    let model = SyntheticModelSpec::with_latency(ms(fixed_ms), ms(per_item_ms));
    model.validate().map_err(|e| JsError::new(&e.to_string()))?;
    let mut cfg = BatchSimConfig::new(model, ArrivalProcess::Saturated, strategy(strategy_name)?, ms(slo_ms));
    cfg.duration = Duration::from_secs_f64(seconds);
    cfg.seed = seed;
    let report = simulate_batching(&cfg);
    let to_ms = |d: Duration| d.as_secs_f64() * 1e3;
    Ok(report.batches.iter().flat_map(|b| [to_ms(b.start), b.size as f64, to_ms(b.latency), b.max_batch as f64]).collect())
}

/// Cumulative error of five static models, Exp3 and Exp4 while the best
/// model degrades to `degraded_rate` for queries 5000..10000.
///
/// Rows of 8: `query, static_0..static_4, exp3, exp4`.
#[wasm_bindgen]
pub fn failure_curves(eta: f64, degraded_rate: f64, seed: u64) -> Result<Vec<f64>, JsError> {
    if !(eta > 0.0 && (0.0..=1.0).contains(&degraded_rate)) {
        return Err(JsError::new("need eta > 0 and a degraded rate in [0, 1]"));
    }
    let mut s = FailureScenario::standard(seed);
    s.eta = eta;
    if let Some(d) = s.degradation.as_mut() {
        d.1 = degraded_rate;
    }
    let report = run_failure_scenario(&s);
    Ok(report
        .curve
        .iter()
        .flat_map(|p| std::iter::once(p.query as f64).chain(p.static_models.iter().copied()).chain([p.exp3, p.exp4]))
        .collect())
}

/// Hit rate of the prediction cache on a Zipf stream, for each capacity.
///
/// Rows of 2: `capacity, hit_rate`.
#[wasm_bindgen]
pub fn cache_hit_rates(exponent: f64, universe: u64, queries: u64, capacities: Vec<u32>, seed: u64) -> Result<Vec<f64>, JsError> {
    if queries > 1_000_000 {
        return Err(JsError::new("at most 10^6 queries"));
    }
    let spec = WorkloadSpec {
        arrival: Arrival::ClosedLoop { concurrency: 1 },
        queries,
        feedback_fraction: 0.0,
        popularity: Popularity::Zipf { exponent, universe },
    };
    let events = generate_workload(&spec, seed).map_err(|e| JsError::new(&e.to_string()))?;
    Ok(capacities.iter().filter(|&&c| c > 0).flat_map(|&c| [c as f64, replay_cache(&events, c as usize).hit_rate()]).collect())
}
