//! Experiment parameters. Every field has a default; a TOML file passed with
//! `--config` overrides any subset, one table per experiment.

use std::path::Path;

use serde::Deserialize;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub aimd: AimdConfig,
    pub batching: BatchingConfig,
    pub batch_delay: BatchDelayConfig,
    pub failure: FailureConfig,
    pub ensemble: EnsembleConfig,
    pub cache: CacheConfig,
    pub stragglers: StragglerConfig,
    pub faults: FaultConfig,
}

impl BenchConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AimdConfig {
    pub fixed_ms: f64,
    pub per_item_ms: f64,
    pub slo_ms: f64,
    /// Poisson rate as a fraction of the replica's capacity at the optimum batch size.
    pub load_fraction: f64,
    pub duration_s: f64,
    pub warmup_s: f64,
}

impl Default for AimdConfig {
    fn default() -> Self {
        AimdConfig { fixed_ms: 1.0, per_item_ms: 0.1, slo_ms: 20.0, load_fraction: 0.97, duration_s: 60.0, warmup_s: 10.0 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatchingConfig {
    pub slo_ms: f64,
    pub duration_s: f64,
    /// `(name, fixed ms, per-item ms, jitter ms)`
    pub profiles: Vec<(String, f64, f64, f64)>,
}

impl Default for BatchingConfig {
    fn default() -> Self {
        BatchingConfig {
            slo_ms: 50.0,
            duration_s: 10.0,
            profiles: vec![
                ("high-fixed".into(), 5.0, 0.05, 0.0),
                ("linear".into(), 1.0, 0.1, 0.0),
                ("jittery".into(), 2.0, 0.2, 0.5),
                ("noop".into(), 0.05, 0.002, 0.0),
            ],
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatchDelayConfig {
    pub fixed_ms: f64,
    pub per_item_ms: f64,
    pub slo_ms: f64,
    pub rate_qps: f64,
    pub delays_ms: Vec<f64>,
    pub duration_s: f64,
}

impl Default for BatchDelayConfig {
    fn default() -> Self {
        BatchDelayConfig { fixed_ms: 5.0, per_item_ms: 0.05, slo_ms: 50.0, rate_qps: 500.0, delays_ms: vec![0.0, 2.0], duration_s: 30.0 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FailureConfig {
    pub error_rates: Vec<f64>,
    pub degraded_rate: f64,
    pub window: (u64, u64),
    pub queries: u64,
    pub labels: usize,
    pub eta: f64,
    pub checkpoint_every: u64,
    /// Allowed excess over the best model's error before the degradation.
    pub pre_window_tolerance: f64,
}

impl Default for FailureConfig {
    fn default() -> Self {
        FailureConfig {
            error_rates: vec![0.5, 0.4, 0.3, 0.2, 0.1],
            degraded_rate: 0.9,
            window: (5_000, 10_000),
            queries: 20_000,
            labels: 10,
            eta: 0.1,
            checkpoint_every: 250,
            pre_window_tolerance: 0.03,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub models: usize,
    pub error_rate: f64,
    pub labels: usize,
    pub queries: u64,
    pub eta: f64,
    /// Extra learning rates reported without a threshold.
    pub compare_etas: Vec<f64>,
    pub margin: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig { models: 5, error_rate: 0.3, labels: 2, queries: 10_000, eta: 0.01, compare_etas: vec![0.1, 1e-6], margin: 0.05 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CacheConfig {
    pub zipf_exponent: f64,
    pub universe: u64,
    pub capacity: usize,
    pub queries: u64,
    pub capacities: Vec<usize>,
    /// Distinct inputs per phase of the hot vs cold feedback run.
    pub feedback_items: u64,
}

impl Default for CacheConfig {
    fn default() -> Self {
        CacheConfig {
            zipf_exponent: 1.1,
            universe: 1_000,
            capacity: 100,
            queries: 100_000,
            capacities: vec![10, 25, 50, 100, 200, 400, 800],
            feedback_items: 2_000,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StragglerConfig {
    pub sizes: Vec<usize>,
    pub slo_ms: f64,
    pub combine_margin_ms: f64,
    /// Latency of the slow member as a multiple of the SLO.
    pub slow_factor: f64,
    pub member_fixed_ms: f64,
    pub member_error: f64,
    pub labels: usize,
    /// Poisson arrival rate of the open-loop query stream.
    pub rate_qps: f64,
    pub queries: u64,
    pub blocking_queries: u64,
    pub max_accuracy_drop: f64,
    pub min_missing_fraction: f64,
}

impl Default for StragglerConfig {
    fn default() -> Self {
        StragglerConfig {
            sizes: vec![2, 4, 8, 16],
            slo_ms: 20.0,
            combine_margin_ms: 1.0,
            slow_factor: 10.0,
            member_fixed_ms: 1.0,
            member_error: 0.2,
            labels: 10,
            rate_qps: 250.0,
            queries: 1_000,
            blocking_queries: 100,
            max_accuracy_drop: 0.05,
            min_missing_fraction: 0.99,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaultConfig {
    pub slo_ms: f64,
    pub burst: u64,
    pub flap_every_ms: u64,
    pub flap_duration_ms: u64,
}

impl Default for FaultConfig {
    fn default() -> Self {
        FaultConfig { slo_ms: 30.0, burst: 40, flap_every_ms: 40, flap_duration_ms: 1_000 }
    }
}
