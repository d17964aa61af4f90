//! Batch sizing from a linear fit of tail latency against batch size.
//!
//! The fit minimizes pinball loss at quantile `tau`. For a fixed slope the
//! optimal intercept is the `tau`-quantile of the residuals, so the search
//! runs over the slope alone: each iteration evaluates a subgradient of the
//! profiled loss and halves the bracket on its sign.

use std::time::Duration;

use super::profile::LatencyProfile;

pub const DEFAULT_TAU: f64 = 0.99;
pub const FIT_ITERATIONS: usize = 500;
pub const MIN_SAMPLES: usize = 50;
pub const MIN_DISTINCT_SIZES: usize = 3;
pub const MAX_BATCH_LIMIT: u32 = 1 << 16;

/// `latency ≈ intercept + slope · batch_size`, latencies in nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub intercept: f64,
    pub slope: f64,
}

impl LinearFit {
    pub fn predict(&self, batch_size: f64) -> f64 {
        self.intercept + self.slope * batch_size
    }
}

/// Pinball (check) loss summed over residuals of `fit`.
pub fn pinball_loss(points: &[(f64, f64)], fit: LinearFit, tau: f64) -> f64 {
    points
        .iter()
        .map(|&(x, y)| {
            let u = y - fit.predict(x);
            if u >= 0.0 {
                tau * u
            } else {
                (tau - 1.0) * u
            }
        })
        .sum()
}

/// Index of the order statistic minimizing `Σ ρ_tau(r_i - a)` over `a`.
fn quantile_index(n: usize, tau: f64) -> usize {
    ((tau * n as f64).ceil() as usize).clamp(1, n) - 1
}

/// Fits a `tau`-quantile regression line. Needs at least two distinct x values.
pub fn fit_quantile_line(points: &[(f64, f64)], tau: f64, iterations: usize) -> Option<LinearFit> {
    let mut sorted: Vec<(f64, f64)> = points.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    // (x, min y, max y) per distinct x
    let mut groups: Vec<(f64, f64, f64)> = Vec::new();
    for &(x, y) in &sorted {
        match groups.last_mut() {
            Some(g) if g.0 == x => {
                g.1 = g.1.min(y);
                g.2 = g.2.max(y);
            }
            _ => groups.push((x, y, y)),
        }
    }
    if groups.len() < 2 {
        return None;
    }

    // Every pairwise slope lies in [lo, hi]; an optimal line interpolates two points.
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (i, gi) in groups.iter().enumerate() {
        for gj in &groups[i + 1..] {
            let dx = gj.0 - gi.0;
            lo = lo.min((gj.1 - gi.2) / dx);
            hi = hi.max((gj.2 - gi.1) / dx);
        }
    }

    let scale = points.iter().map(|p| p.1.abs()).fold(0.0, f64::max).max(1.0);
    let eps = scale * 1e-12;
    let k = quantile_index(points.len(), tau);
    let mut residuals = vec![0.0; points.len()];

    let intercept_at = |slope: f64, residuals: &mut Vec<f64>| -> f64 {
        for (r, &(x, y)) in residuals.iter_mut().zip(points) {
            *r = y - slope * x;
        }
        *residuals.select_nth_unstable_by(k, |a, b| a.total_cmp(b)).1
    };

    for _ in 0..iterations {
        let mid = lo + (hi - lo) / 2.0;
        if mid <= lo || mid >= hi {
            break;
        }
        let a = intercept_at(mid, &mut residuals);
        // Subgradient in the slope direction. Points on the line take the
        // share of the intercept subgradient that keeps it at zero.
        let (mut g, mut psi_sum, mut zero_count, mut zero_x) = (0.0, 0.0, 0usize, 0.0);
        for &(x, y) in points {
            let u = y - a - mid * x;
            if u.abs() <= eps {
                zero_count += 1;
                zero_x += x;
            } else {
                let psi = if u > 0.0 { tau } else { tau - 1.0 };
                psi_sum += psi;
                g -= x * psi;
            }
        }
        if zero_count > 0 {
            g += zero_x * psi_sum / zero_count as f64;
        }
        if g > 0.0 {
            hi = mid;
        } else if g < 0.0 {
            lo = mid;
        } else {
            lo = mid;
            hi = mid;
            break;
        }
    }
    let slope = lo + (hi - lo) / 2.0;
    let intercept = intercept_at(slope, &mut residuals);
    Some(LinearFit { intercept, slope })
}

/// Largest integer batch whose fitted latency stays within `slo`.
pub fn max_batch_for(fit: LinearFit, slo: Duration) -> u32 {
    if fit.slope <= 0.0 {
        return MAX_BATCH_LIMIT;
    }
    let budget = (slo.as_nanos() as f64 - fit.intercept) / fit.slope;
    if budget.is_nan() || budget < 1.0 {
        return 1;
    }
    let b = (budget + 1e-6).floor();
    if b >= MAX_BATCH_LIMIT as f64 {
        MAX_BATCH_LIMIT
    } else {
        b as u32
    }
}

/// Maximum batch size from a `tau`-quantile fit of the profile, or `None` when
/// the profile is too thin (fewer than 50 samples or 3 distinct sizes).
pub fn quantile_max_batch(profile: &LatencyProfile, slo: Duration, tau: f64) -> Option<u32> {
    if profile.len() < MIN_SAMPLES || profile.distinct_batch_sizes() < MIN_DISTINCT_SIZES {
        return None;
    }
    let points: Vec<(f64, f64)> = profile.samples().map(|s| (s.batch_size as f64, s.latency.as_nanos() as f64)).collect();
    fit_quantile_line(&points, tau, FIT_ITERATIONS).map(|fit| max_batch_for(fit, slo))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, Normal};

    /// Exact quantile regression by enumeration: an optimal line passes
    /// through two samples, so try every pair.
    fn brute_force_fit(points: &[(f64, f64)], tau: f64) -> LinearFit {
        let mut best = (f64::INFINITY, LinearFit { intercept: 0.0, slope: 0.0 });
        for (i, p) in points.iter().enumerate() {
            for q in &points[i + 1..] {
                if p.0 == q.0 {
                    continue;
                }
                let slope = (q.1 - p.1) / (q.0 - p.0);
                let fit = LinearFit { intercept: p.1 - slope * p.0, slope };
                let loss = pinball_loss(points, fit, tau);
                if loss < best.0 {
                    best = (loss, fit);
                }
            }
        }
        best.1
    }

    fn linear_profile(noise_ms: f64, seed: u64, n: usize) -> LatencyProfile {
        let mut rng = StdRng::seed_from_u64(seed);
        let noise = Normal::new(0.0, noise_ms.max(1e-300)).unwrap();
        let mut p = LatencyProfile::default();
        for _ in 0..n {
            let b: u32 = rng.random_range(1..=200);
            let mut ms = 0.1 * b as f64 + 1.0;
            if noise_ms > 0.0 {
                ms += noise.sample(&mut rng);
            }
            let ns = (ms * 1e6).round().max(1.0) as u64;
            p.record(b, Duration::from_nanos(ns));
        }
        p
    }

    #[test]
    fn noiseless_linear_profile_gives_analytic_optimum() {
        // 1 + 0.1 B <= 20  =>  B = 190
        let p = linear_profile(0.0, 1, 200);
        assert_eq!(quantile_max_batch(&p, Duration::from_millis(20), DEFAULT_TAU), Some(190));
    }

    #[test]
    fn noisy_profile_within_band_and_matches_exact_fit() {
        let p = linear_profile(0.5, 7, 200);
        let slo = Duration::from_millis(20);
        let b = quantile_max_batch(&p, slo, DEFAULT_TAU).unwrap();
        assert!((160..=190).contains(&b), "B = {b}");

        let points: Vec<(f64, f64)> = p.samples().map(|s| (s.batch_size as f64, s.latency.as_nanos() as f64)).collect();
        let exact = brute_force_fit(&points, DEFAULT_TAU);
        let ours = fit_quantile_line(&points, DEFAULT_TAU, FIT_ITERATIONS).unwrap();
        let (l_exact, l_ours) = (pinball_loss(&points, exact, 0.99), pinball_loss(&points, ours, 0.99));
        assert!(l_ours <= l_exact * (1.0 + 1e-9), "ours {l_ours} exact {l_exact}");
        let b_exact = max_batch_for(exact, slo);
        assert!(b.abs_diff(b_exact) <= 1, "ours {b} exact {b_exact}");
    }

    #[test]
    fn fit_matches_brute_force_on_random_clouds() {
        let mut rng = StdRng::seed_from_u64(99);
        for _ in 0..20 {
            let n = rng.random_range(10..60);
            let points: Vec<(f64, f64)> = (0..n)
                .map(|_| {
                    let x = rng.random_range(1..30) as f64;
                    (x, 3.0 * x + rng.random_range(-20.0..20.0))
                })
                .collect();
            for tau in [0.5, 0.9, 0.99] {
                let exact = brute_force_fit(&points, tau);
                let ours = fit_quantile_line(&points, tau, FIT_ITERATIONS).unwrap();
                let (le, lo) = (pinball_loss(&points, exact, tau), pinball_loss(&points, ours, tau));
                assert!(lo <= le + 1e-9 * le.abs().max(1.0), "tau {tau}: ours {lo} exact {le}");
            }
        }
    }

    #[test]
    fn non_positive_slope_is_unbounded() {
        let fit = LinearFit { intercept: 1e6, slope: -5.0 };
        assert_eq!(max_batch_for(fit, Duration::from_millis(20)), MAX_BATCH_LIMIT);
        let flat = LinearFit { intercept: 1e6, slope: 0.0 };
        assert_eq!(max_batch_for(flat, Duration::from_millis(20)), MAX_BATCH_LIMIT);
    }

    #[test]
    fn intercept_over_slo_clamps_to_one() {
        let fit = LinearFit { intercept: 30e6, slope: 1e5 };
        assert_eq!(max_batch_for(fit, Duration::from_millis(20)), 1);
    }

    #[test]
    fn thin_profile_falls_back() {
        let mut p = LatencyProfile::default();
        for _ in 0..100 {
            p.record(8, Duration::from_millis(2));
            p.record(16, Duration::from_millis(3));
        }
        assert_eq!(quantile_max_batch(&p, Duration::from_millis(20), DEFAULT_TAU), None);
        let mut q = LatencyProfile::default();
        for b in 1..=10 {
            q.record(b, Duration::from_millis(b as u64));
        }
        assert_eq!(quantile_max_batch(&q, Duration::from_millis(20), DEFAULT_TAU), None);
    }
}
