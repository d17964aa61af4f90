//! Deterministic simulations used by tests, the bench harness and the demo.

pub mod bandit;
pub mod batching;
pub mod synthetic;
pub mod workload;

pub use bandit::{
    run_ensemble_scenario, run_failure_scenario, AgreementBucket, CurvePoint, EnsembleReport, EnsembleScenario, FailureReport,
    FailureScenario,
};
pub use batching::{quantile, simulate_batching, ArrivalProcess, BatchRecord, BatchSimConfig, BatchSimReport};
pub use synthetic::{parse_synthetic_input, synthetic_input, ErrorPhase, SyntheticModelSpec};
pub use workload::{generate_workload, replay_cache, Arrival, CacheReplay, Popularity, WorkloadEvent, WorkloadSpec};
