//! Adaptive batching: latency profiles, batch-size control, and the queue
//! discipline shared by live dispatchers and the simulator.

pub mod aimd;
pub mod profile;
pub mod quantile;
pub mod queue;
pub mod route;
pub mod sizer;

pub use aimd::{aimd_update, DEFAULT_ADDITIVE_STEP};
pub use profile::{LatencyProfile, LatencySample, PROFILE_WINDOW};
pub use quantile::{fit_quantile_line, quantile_max_batch, LinearFit};
pub use queue::{delay_budget, BatchQueue, Drained, Queued};
pub use route::{route_to_replica, ReplicaLoad};
pub use sizer::{BatchSizer, SizingStrategy};

/// Fraction of an application's SLO granted to batch evaluation; the rest
/// covers RPC and combine overhead.
pub const SLO_HEADROOM: f64 = 0.9;
