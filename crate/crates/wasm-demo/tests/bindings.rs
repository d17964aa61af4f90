use std::collections::HashSet;

use predserve_core::sim::{generate_workload, Arrival, Popularity, WorkloadSpec};
use predserve_demo::{batch_trace, cache_hit_rates, failure_curves};

#[test]
fn aimd_trace_settles_below_the_analytic_optimum() {
    let rows = batch_trace(1.0, 0.1, 20.0, "aimd", 20.0, 3).unwrap();
    assert_eq!(rows.len() % 4, 0);
    // 1ms + 0.1ms·b <= 20ms
    let optimum = 190.0;
    let late: Vec<&[f64]> = rows.chunks(4).filter(|r| r[0] > 5_000.0).collect();
    assert!(!late.is_empty());
    for r in late {
        assert!(r[3] >= (0.9f64 * optimum).floor() && r[3] <= optimum + 4.0, "{r:?}");
        assert!(r[1] <= r[3]);
    }
}

#[test]
fn unbatched_trace_serves_one_at_a_time() {
    let rows = batch_trace(5.0, 0.05, 50.0, "none", 1.0, 1).unwrap();
    assert!(rows.chunks(4).all(|r| r[1] == 1.0 && r[3] == 1.0));
    // 1000ms / 5.05ms per batch
    assert!((rows.len() / 4).abs_diff(198) <= 1, "{} batches", rows.len() / 4);
}

#[test]
fn failure_curves_have_eight_columns_and_exp4_beats_static() {
    let rows = failure_curves(0.1, 0.9, 7).unwrap();
    assert_eq!(rows.len() % 8, 0);
    let last = rows.chunks(8).last().unwrap();
    assert_eq!(last[0], 20_000.0);
    let best_static = last[1..6].iter().copied().fold(f64::INFINITY, f64::min);
    assert!(last[7] < best_static, "{last:?}");
}

#[test]
fn cache_large_enough_for_the_universe_only_misses_first_sightings() {
    let (exponent, universe, queries, seed) = (1.1, 500, 20_000, 5);
    let spec = WorkloadSpec {
        arrival: Arrival::ClosedLoop { concurrency: 1 },
        queries,
        feedback_fraction: 0.0,
        popularity: Popularity::Zipf { exponent, universe },
    };
    let distinct = generate_workload(&spec, seed).unwrap().iter().map(|e| e.item).collect::<HashSet<_>>().len();
    let rows = cache_hit_rates(exponent, universe, queries, vec![10, universe as u32], seed).unwrap();
    assert_eq!(rows.len(), 4);
    let want = 1.0 - distinct as f64 / queries as f64;
    assert!((rows[3] - want).abs() < 1e-12, "{} vs {want}", rows[3]);
    assert!(rows[1] < rows[3]);
}
