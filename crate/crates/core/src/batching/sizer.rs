use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::aimd::{aimd_update, DEFAULT_ADDITIVE_STEP};
use super::profile::LatencyProfile;
use super::quantile::{quantile_max_batch, DEFAULT_TAU};

/// How a replica's maximum batch size is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizingStrategy {
    /// Constant maximum; `Fixed(1)` disables batching.
    Fixed(u32),
    Aimd,
    /// Quantile-regression fit, falling back to AIMD while the profile is thin.
    Quantile,
}

/// Owns a replica's latency profile and its current maximum batch size.
#[derive(Debug, Clone)]
pub struct BatchSizer {
    strategy: SizingStrategy,
    profile: LatencyProfile,
    max_batch: u32,
    additive_step: u32,
    target: Duration,
    tau: f64,
}

impl BatchSizer {
    pub fn new(strategy: SizingStrategy, target: Duration) -> Self {
        let max_batch = match strategy {
            SizingStrategy::Fixed(n) => n.max(1),
            _ => 1,
        };
        BatchSizer {
            strategy,
            profile: LatencyProfile::default(),
            max_batch,
            additive_step: DEFAULT_ADDITIVE_STEP,
            target,
            tau: DEFAULT_TAU,
        }
    }

    pub fn with_additive_step(mut self, step: u32) -> Self {
        self.additive_step = step.max(1);
        self
    }

    pub fn strategy(&self) -> SizingStrategy {
        self.strategy
    }

    pub fn max_batch(&self) -> u32 {
        self.max_batch
    }

    pub fn target(&self) -> Duration {
        self.target
    }

    pub fn profile(&self) -> &LatencyProfile {
        &self.profile
    }

    /// Latency of the most recent batch, used to budget batch delays.
    pub fn expected_latency(&self) -> Duration {
        self.profile.last().map(|s| s.latency).unwrap_or_default()
    }

    /// Records a completed batch and returns the new maximum batch size.
    pub fn observe(&mut self, batch_size: u32, latency: Duration) -> u32 {
        self.profile.record(batch_size, latency);
        self.max_batch = match self.strategy {
            SizingStrategy::Fixed(n) => n.max(1),
            SizingStrategy::Aimd => aimd_update(batch_size, latency, self.target, self.max_batch, self.additive_step),
            SizingStrategy::Quantile => quantile_max_batch(&self.profile, self.target, self.tau)
                .unwrap_or_else(|| aimd_update(batch_size, latency, self.target, self.max_batch, self.additive_step)),
        };
        self.max_batch
    }
}
