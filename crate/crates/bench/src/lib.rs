//! Desk-scale experiments for the prediction server.
//!
//! Simulated experiments drive the batching and selection code on a virtual
//! clock; live ones start a server on loopback with synthetic containers.
//! Every experiment returns CSV tables and a list of threshold checks.

pub mod config;
pub mod live;
pub mod report;
pub mod simulated;

pub use config::BenchConfig;
pub use report::{Check, Report, Table};

/// Experiment names and one-line descriptions.
pub const EXPERIMENTS: &[(&str, &str)] = &[
    ("aimd", "AIMD max-batch convergence on a linear latency profile"),
    ("batching-comparison", "no batching vs AIMD vs quantile across latency profiles"),
    ("batch-delay", "throughput with and without a 2ms batch delay"),
    ("model-failure", "Exp3 and Exp4 recovery from a degraded model"),
    ("ensemble", "Exp4 ensemble error and confidence"),
    ("cache", "hit rate under Zipf popularity, and hot vs cold feedback"),
    ("stragglers", "ensembles with one slow member, deadline vs blocking"),
    ("faults", "deadlines under container kills and connection flaps"),
];

pub fn run_experiment(name: &str, cfg: &BenchConfig, seed: u64) -> Result<Report, String> {
    let report = match name {
        "aimd" => simulated::aimd(&cfg.aimd, seed).report(),
        "batching-comparison" => simulated::batching_comparison(&cfg.batching, seed).report(),
        "batch-delay" => simulated::batch_delay(&cfg.batch_delay, seed).report(),
        "model-failure" => simulated::model_failure(&cfg.failure, seed).report(),
        "ensemble" => simulated::ensemble(&cfg.ensemble, seed).report(),
        "cache" => {
            let hits = simulated::cache_hit_rates(&cfg.cache, seed);
            let feedback = live::cache_feedback(&cfg.cache, seed).map_err(|e| e.to_string())?;
            let mut r = hits.report();
            r.merge(feedback.report());
            r
        }
        "stragglers" => live::stragglers(&cfg.stragglers, seed).map_err(|e| e.to_string())?.report(),
        "faults" => live::faults(&cfg.faults, seed).map_err(|e| e.to_string())?.report(),
        other => return Err(format!("unknown experiment {other:?}; try `bench list`")),
    };
    Ok(report.with_seed(seed))
}
