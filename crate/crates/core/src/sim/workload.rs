//! Seeded query streams for load generation and cache experiments.

use std::time::Duration;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Exp, Zipf};
use serde::{Deserialize, Serialize};

use crate::cache::{CacheKey, PredictionCache, Reservation};
use crate::error::{Error, Result};
use crate::types::{InputPayload, ModelName, Output};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Arrival {
    /// `concurrency` callers in lock-step; events carry no timestamps.
    ClosedLoop {
        concurrency: usize,
    },
    Poisson {
        rate_qps: f64,
    },
    /// Alternates `on_qps` and `off_qps` every half `period`.
    Burst {
        on_qps: f64,
        off_qps: f64,
        #[serde(with = "secs")]
        period: Duration,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Popularity {
    UniqueEach,
    Zipf { exponent: f64, universe: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub arrival: Arrival,
    pub queries: u64,
    pub feedback_fraction: f64,
    pub popularity: Popularity,
}

mod secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Duration::try_from_secs_f64(f64::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WorkloadEvent {
    /// Offset from the start of the run; zero for closed-loop streams.
    pub at: Duration,
    /// Input identity; equal items are equal inputs.
    pub item: u64,
    pub feedback: bool,
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        match &self.arrival {
            Arrival::ClosedLoop { concurrency: 0 } => return bad("closed-loop concurrency must be positive".into()),
            Arrival::Poisson { rate_qps } if rate_qps.is_nan() || *rate_qps <= 0.0 => {
                return bad(format!("rate must be positive, got {rate_qps}"))
            }
            Arrival::Burst { on_qps, off_qps, period } if !(*on_qps > 0.0 && *off_qps > 0.0) || period.is_zero() => {
                return bad("burst rates and period must be positive".into())
            }
            _ => {}
        }
        if !(0.0..=1.0).contains(&self.feedback_fraction) {
            return bad(format!("feedback_fraction must be in [0, 1], got {}", self.feedback_fraction));
        }
        if let Popularity::Zipf { exponent, universe } = self.popularity {
            if exponent.is_nan() || exponent <= 0.0 || universe == 0 {
                return bad("zipf needs a positive exponent and universe".into());
            }
        }
        Ok(())
    }
}

pub fn generate_workload(spec: &WorkloadSpec, seed: u64) -> Result<Vec<WorkloadEvent>> {
    spec.validate()?;
    let mut rng = StdRng::seed_from_u64(seed);
    let zipf = match spec.popularity {
        Popularity::Zipf { exponent, universe } => {
            Some(Zipf::new(universe as f64, exponent).map_err(|e| Error::InvalidArgument(e.to_string()))?)
        }
        Popularity::UniqueEach => None,
    };
    let mut t = 0.0f64;
    let mut out = Vec::with_capacity(spec.queries as usize);
    for i in 0..spec.queries {
        t = match &spec.arrival {
            Arrival::ClosedLoop { .. } => 0.0,
            Arrival::Poisson { rate_qps } => t + Exp::new(*rate_qps).unwrap().sample(&mut rng),
            Arrival::Burst { on_qps, off_qps, period } => next_burst_arrival(t, *on_qps, *off_qps, period.as_secs_f64(), &mut rng),
        };
        let item = match &zipf {
            Some(z) => z.sample(&mut rng) as u64 - 1,
            None => i,
        };
        let feedback = spec.feedback_fraction > 0.0 && rng.random::<f64>() < spec.feedback_fraction;
        out.push(WorkloadEvent { at: Duration::from_secs_f64(t), item, feedback });
    }
    Ok(out)
}

/// Piecewise-constant Poisson process: draw against the current phase's
/// rate and restart at the boundary if the draw crosses it.
fn next_burst_arrival(mut t: f64, on: f64, off: f64, period: f64, rng: &mut StdRng) -> f64 {
    let half = period / 2.0;
    loop {
        let phase = (t / half).floor();
        let rate = if (phase as u64).is_multiple_of(2) { on } else { off };
        let boundary = (phase + 1.0) * half;
        let next = t + Exp::new(rate).unwrap().sample(rng);
        if next < boundary {
            return next;
        }
        t = boundary;
    }
}

/// Cache behaviour of a stream: each item is requested once, and every miss
/// is answered immediately.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CacheReplay {
    pub requests: u64,
    pub hits: u64,
}

impl CacheReplay {
    pub fn hit_rate(&self) -> f64 {
        self.hits as f64 / self.requests.max(1) as f64
    }
}

pub fn replay_cache(events: &[WorkloadEvent], capacity: usize) -> CacheReplay {
    let cache = PredictionCache::new(capacity);
    let model = ModelName::new("replay");
    let mut hits = 0;
    for e in events {
        let key = CacheKey::new(&model, &InputPayload::Bytes(e.item.to_le_bytes().to_vec()));
        let out = Output::new(e.item.to_string());
        hits += cache.request(&key, |r| match r {
            Reservation::Cached(k) => cache.populate(&k, out),
            Reservation::Uncached(_, tx) => {
                let _ = tx.send(out);
            }
        }) as u64;
    }
    CacheReplay { requests: events.len() as u64, hits }
}
