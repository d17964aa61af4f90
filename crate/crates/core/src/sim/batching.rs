//! Discrete-event simulation of one replica's batching loop.
//!
//! Runs the same queue discipline, delay rule and batch sizer as the live
//! dispatcher, but on a virtual nanosecond clock with synthetic latencies.

use std::time::Duration;

use rand::rngs::StdRng;
use rand::SeedableRng;
use rand_distr::{Distribution, Exp};

use super::synthetic::SyntheticModelSpec;
use crate::batching::{delay_budget, BatchQueue, BatchSizer, SizingStrategy, DEFAULT_ADDITIVE_STEP};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ArrivalProcess {
    /// The queue never runs short of a full batch.
    Saturated,
    Poisson {
        rate_qps: f64,
    },
    /// `clients` callers, each issuing its next query when the last returns.
    ClosedLoop {
        clients: usize,
    },
}

#[derive(Debug, Clone)]
pub struct BatchSimConfig {
    pub model: SyntheticModelSpec,
    pub arrivals: ArrivalProcess,
    pub strategy: SizingStrategy,
    pub additive_step: u32,
    /// Latency bound the sizer aims batches at.
    pub batch_target: Duration,
    /// Per-query deadline after arrival; queries past it are dropped unserved.
    pub query_slo: Option<Duration>,
    pub batch_delay: Duration,
    pub duration: Duration,
    pub seed: u64,
}

impl BatchSimConfig {
    pub fn new(model: SyntheticModelSpec, arrivals: ArrivalProcess, strategy: SizingStrategy, batch_target: Duration) -> Self {
        BatchSimConfig {
            model,
            arrivals,
            strategy,
            additive_step: DEFAULT_ADDITIVE_STEP,
            batch_target,
            query_slo: None,
            batch_delay: Duration::ZERO,
            duration: Duration::from_secs(10),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchRecord {
    pub start: Duration,
    pub size: u32,
    pub latency: Duration,
    /// Maximum batch size in force when the batch was dispatched.
    pub max_batch: u32,
}

#[derive(Debug, Clone, Default)]
pub struct BatchSimReport {
    pub batches: Vec<BatchRecord>,
    pub arrived: u64,
    pub served: u64,
    pub expired: u64,
    /// Time the replica spent evaluating batches.
    pub busy: Duration,
    pub elapsed: Duration,
    pub query_latencies: Vec<Duration>,
}

impl BatchSimReport {
    /// Served queries per second of wall (simulated) time.
    pub fn throughput(&self) -> f64 {
        self.served as f64 / self.elapsed.as_secs_f64().max(f64::MIN_POSITIVE)
    }

    /// Served queries per second the replica was busy.
    pub fn efficiency(&self) -> f64 {
        self.served as f64 / self.busy.as_secs_f64().max(f64::MIN_POSITIVE)
    }

    pub fn fraction_batches_within(&self, bound: Duration) -> f64 {
        if self.batches.is_empty() {
            return 1.0;
        }
        self.batches.iter().filter(|b| b.latency <= bound).count() as f64 / self.batches.len() as f64
    }

    pub fn mean_batch_size(&self) -> f64 {
        if self.batches.is_empty() {
            return 0.0;
        }
        self.batches.iter().map(|b| b.size as f64).sum::<f64>() / self.batches.len() as f64
    }

    /// Smallest and largest max-batch setting over batches started at or after `from`.
    pub fn max_batch_range_after(&self, from: Duration) -> Option<(u32, u32)> {
        let mut it = self.batches.iter().filter(|b| b.start >= from).map(|b| b.max_batch);
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), m| (lo.min(m), hi.max(m))))
    }

    pub fn latency_quantile(&self, q: f64) -> Duration {
        quantile(&self.query_latencies, q)
    }
}

/// Nearest-rank quantile of an unsorted sample.
pub fn quantile(samples: &[Duration], q: f64) -> Duration {
    if samples.is_empty() {
        return Duration::ZERO;
    }
    let mut v = samples.to_vec();
    v.sort_unstable();
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}

fn ns(d: Duration) -> u64 {
    d.as_nanos() as u64
}

pub fn simulate_batching(cfg: &BatchSimConfig) -> BatchSimReport {
    let mut rng = StdRng::seed_from_u64(cfg.seed);
    let mut sizer = BatchSizer::new(cfg.strategy, cfg.batch_target).with_additive_step(cfg.additive_step);
    let mut queue: BatchQueue<(), u64> = BatchQueue::new();
    let mut report = BatchSimReport::default();
    let end = ns(cfg.duration);
    let slo = cfg.query_slo.map(ns).unwrap_or(u64::MAX / 4);
    let gap = match cfg.arrivals {
        ArrivalProcess::Poisson { rate_qps } => Some(Exp::new(rate_qps / 1e9).expect("positive arrival rate")),
        _ => None,
    };
    let mut next_arrival = u64::MAX;
    if let Some(g) = &gap {
        next_arrival = g.sample(&mut rng) as u64;
    }
    if let ArrivalProcess::ClosedLoop { clients } = cfg.arrivals {
        for _ in 0..clients {
            queue.push((), 0, slo);
        }
        report.arrived += clients as u64;
    }

    let mut t: u64 = 0;
    let admit = |queue: &mut BatchQueue<(), u64>, report: &mut BatchSimReport, next: &mut u64, rng: &mut StdRng| {
        let at = *next;
        queue.push((), at, at.saturating_add(slo));
        report.arrived += 1;
        *next = at + gap.as_ref().map_or(u64::MAX / 2, |g| g.sample(rng).max(1.0) as u64);
    };

    while t < end {
        while next_arrival <= t {
            admit(&mut queue, &mut report, &mut next_arrival, &mut rng);
        }
        let max = sizer.max_batch() as usize;
        if cfg.arrivals == ArrivalProcess::Saturated {
            while queue.len() < max {
                queue.push((), t, t.saturating_add(slo));
                report.arrived += 1;
            }
        }
        if queue.is_empty() {
            if next_arrival >= end {
                break;
            }
            t = next_arrival;
            continue;
        }

        let slack = cfg.query_slo.and_then(|_| {
            let deadline = queue.earliest_deadline()?;
            Some(Duration::from_nanos(deadline.saturating_sub(t).saturating_sub(ns(sizer.expected_latency()))))
        });
        let wait = ns(delay_budget(queue.len(), max as u32, cfg.batch_delay, slack));
        if wait > 0 {
            let until = t + wait;
            while queue.len() < max && next_arrival <= until {
                t = next_arrival;
                admit(&mut queue, &mut report, &mut next_arrival, &mut rng);
            }
            if queue.len() < max {
                t = until;
            }
        }

        let drained = queue.drain(max, t);
        report.expired += drained.expired.len() as u64;
        let n = drained.batch.len();
        if let ArrivalProcess::ClosedLoop { .. } = cfg.arrivals {
            for _ in 0..drained.expired.len() {
                queue.push((), t, t.saturating_add(slo));
                report.arrived += 1;
            }
        }
        if n == 0 {
            continue;
        }
        let latency = cfg.model.batch_latency(n, &mut rng);
        report.batches.push(BatchRecord { start: Duration::from_nanos(t), size: n as u32, latency, max_batch: max as u32 });
        let done = t + ns(latency).max(1);
        for q in &drained.batch {
            report.query_latencies.push(Duration::from_nanos(done - q.enqueued));
        }
        report.served += n as u64;
        report.busy += latency;
        sizer.observe(n as u32, latency);
        t = done;
        if let ArrivalProcess::ClosedLoop { .. } = cfg.arrivals {
            for _ in 0..n {
                queue.push((), t, t.saturating_add(slo));
                report.arrived += 1;
            }
        }
    }
    report.elapsed = Duration::from_nanos(t.max(end));
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_model() -> SyntheticModelSpec {
        SyntheticModelSpec::with_latency(Duration::from_millis(1), Duration::from_micros(100))
    }

    #[test]
    fn saturated_aimd_hovers_near_optimum() {
        let mut cfg = BatchSimConfig::new(linear_model(), ArrivalProcess::Saturated, SizingStrategy::Aimd, Duration::from_millis(20));
        cfg.duration = Duration::from_secs(5);
        let r = simulate_batching(&cfg);
        let (lo, hi) = r.max_batch_range_after(Duration::from_secs(2)).unwrap();
        assert!(lo >= 171 && hi <= 194, "[{lo}, {hi}]");
    }

    #[test]
    fn no_batching_is_one_item_at_a_time() {
        let model = SyntheticModelSpec::with_latency(Duration::from_millis(5), Duration::from_micros(50));
        let mut cfg = BatchSimConfig::new(model, ArrivalProcess::Saturated, SizingStrategy::Fixed(1), Duration::from_millis(45));
        cfg.duration = Duration::from_secs(2);
        let r = simulate_batching(&cfg);
        assert!(r.batches.iter().all(|b| b.size == 1));
        // 1 / 5.05ms
        assert!((r.throughput() - 198.0).abs() < 1.0, "{}", r.throughput());
    }

    #[test]
    fn closed_loop_never_exceeds_client_count() {
        let mut cfg =
            BatchSimConfig::new(linear_model(), ArrivalProcess::ClosedLoop { clients: 7 }, SizingStrategy::Aimd, Duration::from_millis(20));
        cfg.duration = Duration::from_secs(1);
        let r = simulate_batching(&cfg);
        assert!(r.batches.iter().all(|b| b.size <= 7));
        assert!(r.arrived - r.served <= 7);
    }

    #[test]
    fn poisson_load_is_served() {
        let mut cfg = BatchSimConfig::new(
            linear_model(),
            ArrivalProcess::Poisson { rate_qps: 2000.0 },
            SizingStrategy::Aimd,
            Duration::from_millis(20),
        );
        cfg.duration = Duration::from_secs(5);
        cfg.seed = 3;
        let r = simulate_batching(&cfg);
        assert!((r.throughput() - 2000.0).abs() < 100.0, "{}", r.throughput());
        assert_eq!(r.expired, 0);
    }

    #[test]
    fn deadlines_drop_stale_queries() {
        let slow = SyntheticModelSpec::with_latency(Duration::from_millis(50), Duration::ZERO);
        let mut cfg =
            BatchSimConfig::new(slow, ArrivalProcess::Poisson { rate_qps: 1000.0 }, SizingStrategy::Fixed(1), Duration::from_millis(20));
        cfg.query_slo = Some(Duration::from_millis(20));
        cfg.duration = Duration::from_secs(1);
        let r = simulate_batching(&cfg);
        assert!(r.expired > 0);
    }

    #[test]
    fn delay_waits_for_fuller_batches() {
        let model = SyntheticModelSpec::with_latency(Duration::from_millis(5), Duration::from_micros(50));
        let run = |delay_ms: u64| {
            let mut cfg = BatchSimConfig::new(
                model.clone(),
                ArrivalProcess::Poisson { rate_qps: 500.0 },
                SizingStrategy::Aimd,
                Duration::from_millis(45),
            );
            cfg.batch_delay = Duration::from_millis(delay_ms);
            cfg.duration = Duration::from_secs(10);
            cfg.seed = 5;
            simulate_batching(&cfg)
        };
        let (a, b) = (run(0), run(2));
        assert!(b.mean_batch_size() > a.mean_batch_size());
        assert!(b.efficiency() > a.efficiency());
    }

    #[test]
    fn seeded_runs_repeat() {
        let mut cfg = BatchSimConfig::new(
            linear_model(),
            ArrivalProcess::Poisson { rate_qps: 3000.0 },
            SizingStrategy::Quantile,
            Duration::from_millis(20),
        );
        cfg.duration = Duration::from_secs(1);
        cfg.model.jitter = Duration::from_micros(300);
        let (a, b) = (simulate_batching(&cfg), simulate_batching(&cfg));
        assert_eq!(a.batches, b.batches);
    }
}
