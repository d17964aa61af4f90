use std::collections::VecDeque;
use std::time::Duration;

/// Default number of samples retained per replica.
pub const PROFILE_WINDOW: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatencySample {
    pub batch_size: u32,
    pub latency: Duration,
}

/// Sliding window of `(batch size, batch latency)` observations for one replica.
#[derive(Debug, Clone)]
pub struct LatencyProfile {
    window: VecDeque<LatencySample>,
    capacity: usize,
}

impl Default for LatencyProfile {
    fn default() -> Self {
        Self::with_window(PROFILE_WINDOW)
    }
}

impl LatencyProfile {
    pub fn with_window(capacity: usize) -> Self {
        assert!(capacity > 0, "profile window must hold at least one sample");
        LatencyProfile { window: VecDeque::with_capacity(capacity), capacity }
    }

    /// Records a sample; zero-sized batches and zero latencies are ignored.
    pub fn record(&mut self, batch_size: u32, latency: Duration) {
        if batch_size == 0 || latency.is_zero() {
            return;
        }
        if self.window.len() == self.capacity {
            self.window.pop_front();
        }
        self.window.push_back(LatencySample { batch_size, latency });
    }

    pub fn len(&self) -> usize {
        self.window.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window.is_empty()
    }

    pub fn samples(&self) -> impl Iterator<Item = &LatencySample> {
        self.window.iter()
    }

    pub fn distinct_batch_sizes(&self) -> usize {
        let mut sizes: Vec<u32> = self.window.iter().map(|s| s.batch_size).collect();
        sizes.sort_unstable();
        sizes.dedup();
        sizes.len()
    }

    pub fn last(&self) -> Option<LatencySample> {
        self.window.back().copied()
    }
}
