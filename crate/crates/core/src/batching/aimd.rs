use std::time::Duration;

/// Default additive increase per full batch.
pub const DEFAULT_ADDITIVE_STEP: u32 = 4;
/// Multiplicative backoff applied when a batch overshoots the latency target.
pub const BACKOFF: f64 = 0.9;

/// One AIMD step on the maximum batch size.
///
/// Backs off by 10% when the observed batch latency exceeds `slo`; grows by
/// `additive_step` when a full batch finished within it; otherwise holds.
pub fn aimd_update(observed_batch: u32, latency: Duration, slo: Duration, current_max: u32, additive_step: u32) -> u32 {
    if latency > slo {
        ((current_max as f64 * BACKOFF).floor() as u32).max(1)
    } else if observed_batch >= current_max {
        current_max.saturating_add(additive_step)
    } else {
        current_max
    }
}
