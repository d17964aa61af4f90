//! Counters, gauges and a latency histogram rendered as `name value` lines.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use parking_lot::Mutex;

/// Upper bounds of the latency histogram buckets, in milliseconds.
pub const LATENCY_BUCKETS_MS: [u64; 9] = [1, 2, 5, 10, 20, 50, 100, 200, 500];

#[derive(Debug, Default)]
pub struct Histogram {
    // one per bound plus the overflow bucket
    buckets: [AtomicU64; LATENCY_BUCKETS_MS.len() + 1],
    sum_micros: AtomicU64,
    count: AtomicU64,
}

impl Histogram {
    pub fn observe(&self, d: Duration) {
        let ms = d.as_secs_f64() * 1e3;
        let i = LATENCY_BUCKETS_MS.iter().position(|&b| ms <= b as f64).unwrap_or(LATENCY_BUCKETS_MS.len());
        self.buckets[i].fetch_add(1, Ordering::Relaxed);
        self.sum_micros.fetch_add(d.as_micros() as u64, Ordering::Relaxed);
        self.count.fetch_add(1, Ordering::Relaxed);
    }

    pub fn count(&self) -> u64 {
        self.count.load(Ordering::Relaxed)
    }

    /// Cumulative counts per bucket bound, ending with the `+Inf` total.
    pub fn cumulative(&self) -> Vec<u64> {
        let mut acc = 0;
        self.buckets
            .iter()
            .map(|b| {
                acc += b.load(Ordering::Relaxed);
                acc
            })
            .collect()
    }
}

#[derive(Debug, Default)]
pub struct Metrics {
    counters: Mutex<BTreeMap<String, u64>>,
    gauges: Mutex<BTreeMap<String, f64>>,
    pub predict_latency: Histogram,
    pub batch_latency: Histogram,
}

/// `name{key="value"}`
pub fn labeled(name: &str, key: &str, value: &str) -> String {
    format!("{name}{{{key}=\"{}\"}}", value.replace('\\', "\\\\").replace('"', "\\\""))
}

impl Metrics {
    pub fn inc(&self, name: &str) {
        self.add(name, 1);
    }

    pub fn add(&self, name: &str, by: u64) {
        let mut c = self.counters.lock();
        match c.get_mut(name) {
            Some(v) => *v += by,
            None => {
                c.insert(name.to_string(), by);
            }
        }
    }

    pub fn counter(&self, name: &str) -> u64 {
        self.counters.lock().get(name).copied().unwrap_or(0)
    }

    pub fn set_gauge(&self, name: &str, v: f64) {
        self.gauges.lock().insert(name.to_string(), v);
    }

    pub fn gauge(&self, name: &str) -> Option<f64> {
        self.gauges.lock().get(name).copied()
    }

    /// Renders everything; `extra` lines (e.g. cache counters owned elsewhere)
    /// are merged in.
    pub fn render(&self, extra: &[(String, f64)]) -> String {
        let mut out = String::new();
        for (k, v) in self.counters.lock().iter() {
            let _ = writeln!(out, "{k} {v}");
        }
        for (k, v) in self.gauges.lock().iter() {
            let _ = writeln!(out, "{k} {v}");
        }
        for (k, v) in extra {
            let _ = writeln!(out, "{k} {v}");
        }
        render_histogram(&mut out, "predict_latency_ms", &self.predict_latency);
        render_histogram(&mut out, "batch_latency_ms", &self.batch_latency);
        out
    }
}

fn render_histogram(out: &mut String, name: &str, h: &Histogram) {
    let cum = h.cumulative();
    for (b, c) in LATENCY_BUCKETS_MS.iter().zip(&cum) {
        let _ = writeln!(out, "{name}_bucket{{le=\"{b}\"}} {c}");
    }
    let _ = writeln!(out, "{name}_bucket{{le=\"+Inf\"}} {}", cum.last().unwrap());
    let _ = writeln!(out, "{name}_sum {}", h.sum_micros.load(Ordering::Relaxed) as f64 / 1e3);
    let _ = writeln!(out, "{name}_count {}", h.count());
}

/// Parses rendered metrics back into a map; handy in tests and the bench.
pub fn parse_metrics(text: &str) -> BTreeMap<String, f64> {
    text.lines()
        .filter_map(|l| {
            let (k, v) = l.rsplit_once(' ')?;
            Some((k.to_string(), v.parse().ok()?))
        })
        .collect()
}
