//! Synthetic models with a configurable latency profile and error schedule.

use std::ops::Range;
use std::time::Duration;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::InputPayload;

/// Error rate `rate` applies to queries whose index falls in `queries`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorPhase {
    pub queries: Range<u64>,
    pub rate: f64,
}

/// Latency `fixed + per_item · n + N(0, jitter)` per batch of `n`, and a
/// Bernoulli error rate that may change over the query stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticModelSpec {
    #[serde(with = "micros")]
    pub latency_fixed: Duration,
    #[serde(with = "micros")]
    pub latency_per_item: Duration,
    #[serde(with = "micros")]
    pub jitter: Duration,
    pub base_error: f64,
    pub error_schedule: Vec<ErrorPhase>,
    pub labels: Vec<String>,
    /// Keys the per-query error draws; models with different seeds err independently.
    pub seed: u64,
}

mod micros {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64() * 1e6)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let us = f64::deserialize(d)?;
        if !(us >= 0.0 && us.is_finite()) {
            return Err(serde::de::Error::custom(format!("latency must be non-negative, got {us}")));
        }
        Ok(Duration::from_secs_f64(us / 1e6))
    }
}

impl Default for SyntheticModelSpec {
    fn default() -> Self {
        SyntheticModelSpec {
            latency_fixed: Duration::ZERO,
            latency_per_item: Duration::ZERO,
            jitter: Duration::ZERO,
            base_error: 0.0,
            error_schedule: Vec::new(),
            labels: vec!["0".into(), "1".into()],
            seed: 0,
        }
    }
}

impl SyntheticModelSpec {
    pub fn with_latency(fixed: Duration, per_item: Duration) -> Self {
        SyntheticModelSpec { latency_fixed: fixed, latency_per_item: per_item, ..Default::default() }
    }

    pub fn with_error(mut self, rate: f64, seed: u64) -> Self {
        self.base_error = rate;
        self.seed = seed;
        self
    }

    pub fn with_labels(mut self, n: usize) -> Self {
        self.labels = (0..n).map(|i| i.to_string()).collect();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let rates = std::iter::once(self.base_error).chain(self.error_schedule.iter().map(|p| p.rate));
        for r in rates {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::InvalidArgument(format!("error rate {r} outside [0, 1]")));
            }
        }
        if self.labels.is_empty() {
            return Err(Error::InvalidArgument("synthetic model needs at least one label".into()));
        }
        Ok(())
    }

    pub fn mean_batch_latency(&self, n: usize) -> Duration {
        self.latency_fixed + self.latency_per_item * n as u32
    }

    pub fn batch_latency<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Duration {
        let mean = self.mean_batch_latency(n);
        if self.jitter.is_zero() {
            return mean;
        }
        let noise = Normal::new(0.0, self.jitter.as_secs_f64()).expect("finite jitter").sample(rng);
        Duration::from_secs_f64((mean.as_secs_f64() + noise).max(0.0))
    }

    pub fn error_rate_at(&self, query: u64) -> f64 {
        self.error_schedule.iter().rev().find(|p| p.queries.contains(&query)).map_or(self.base_error, |p| p.rate)
    }

    /// Label index predicted for query `query` whose true label is `truth`.
    /// Deterministic in `(seed, query)`; wrong answers are uniform over the
    /// other labels.
    pub fn predict(&self, query: u64, truth: usize) -> usize {
        let k = self.labels.len();
        if k < 2 || unit(self.seed, query, 0) >= self.error_rate_at(query) {
            return truth % k.max(1);
        }
        let offset = 1 + (mix(self.seed, query, 1) % (k as u64 - 1)) as usize;
        (truth + offset) % k
    }

    pub fn predict_label(&self, query: u64, truth: usize) -> &str {
        &self.labels[self.predict(query, truth)]
    }
}

/// Input encoding the synthetic models understand: `[query index, true label]`.
pub fn synthetic_input(query: u64, truth: usize) -> InputPayload {
    InputPayload::Doubles(vec![query as f64, truth as f64])
}

pub fn parse_synthetic_input(input: &InputPayload) -> Option<(u64, usize)> {
    match input {
        InputPayload::Doubles(v) if v.len() >= 2 && v[0] >= 0.0 && v[1] >= 0.0 => Some((v[0] as u64, v[1] as usize)),
        _ => None,
    }
}

fn mix(seed: u64, query: u64, salt: u64) -> u64 {
    // splitmix64 finalizer over a combined key
    let mut z = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(query.wrapping_mul(0xD1B5_4A32_D192_ED03))
        .wrapping_add(salt.wrapping_mul(0x94D0_49BB_1331_11EB))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn unit(seed: u64, query: u64, salt: u64) -> f64 {
    (mix(seed, query, salt) >> 11) as f64 / (1u64 << 53) as f64
}
