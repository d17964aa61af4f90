//! Offline runs of the selection policies against synthetic models.

use std::collections::BTreeMap;
use std::ops::Range;
use std::time::Duration;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use super::synthetic::{ErrorPhase, SyntheticModelSpec};
use crate::loss::LossFn;
use crate::selection::{exp3_select, BanditState, Exp3Policy, Exp4Policy, SelectionPolicy};
use crate::types::{InputPayload, ModelName, Output, Query};

/// Fixed-rate models, one of which may degrade for a window of queries.
#[derive(Debug, Clone)]
pub struct FailureScenario {
    pub error_rates: Vec<f64>,
    /// `(model index, error rate, query window)`
    pub degradation: Option<(usize, f64, Range<u64>)>,
    pub labels: usize,
    pub queries: u64,
    pub eta: f64,
    pub seed: u64,
    pub checkpoint_every: u64,
}

impl FailureScenario {
    /// Five models with error rates 0.5 down to 0.1; the best one jumps to
    /// 0.9 for queries 5000..10000 out of 20000.
    pub fn standard(seed: u64) -> Self {
        FailureScenario {
            error_rates: vec![0.5, 0.4, 0.3, 0.2, 0.1],
            degradation: Some((4, 0.9, 5_000..10_000)),
            labels: 10,
            queries: 20_000,
            eta: 0.1,
            seed,
            checkpoint_every: 500,
        }
    }

    pub fn models(&self) -> Vec<SyntheticModelSpec> {
        self.error_rates
            .iter()
            .enumerate()
            .map(|(i, &rate)| {
                let mut m = SyntheticModelSpec::default()
                    .with_error(rate, self.seed.wrapping_mul(1_000).wrapping_add(i as u64 + 1))
                    .with_labels(self.labels);
                if let Some((d, r, w)) = &self.degradation {
                    if *d == i {
                        m.error_schedule.push(ErrorPhase { queries: w.clone(), rate: *r });
                    }
                }
                m
            })
            .collect()
    }
}

/// Cumulative error rates after `query` queries.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub query: u64,
    pub static_models: Vec<f64>,
    pub exp3: f64,
    pub exp4: f64,
}

#[derive(Debug, Clone)]
pub struct FailureReport {
    pub curve: Vec<CurvePoint>,
}

impl FailureReport {
    pub fn last(&self) -> &CurvePoint {
        self.curve.last().expect("nonempty curve")
    }

    /// The latest checkpoint at or before `query`.
    pub fn at(&self, query: u64) -> Option<&CurvePoint> {
        self.curve.iter().rev().find(|p| p.query <= query)
    }
}

pub(crate) fn model_names(k: usize) -> Vec<ModelName> {
    (0..k).map(|i| ModelName::new(format!("model-{i}"))).collect()
}

pub(crate) fn probe_query() -> Query {
    Query::new("sim", "", InputPayload::Bytes(Vec::new()), Duration::from_secs(1)).expect("positive slo")
}

/// Exp3 sees only the model it picked; Exp4 sees every model. Both learn
/// from zero-one loss after each query.
pub fn run_failure_scenario(s: &FailureScenario) -> FailureReport {
    let models = s.models();
    let names = model_names(models.len());
    let exp3 = Exp3Policy::new(names.clone(), s.eta, LossFn::ZeroOne);
    let exp4 = Exp4Policy::new(names.clone(), s.eta, LossFn::ZeroOne);
    let (mut st3, mut st4) = (exp3.init(), exp4.init());
    let labels: Vec<String> = (0..s.labels).map(|i| i.to_string()).collect();
    let query = probe_query();
    let mut rng = StdRng::seed_from_u64(s.seed);
    let mut static_wrong = vec![0u64; models.len()];
    let (mut wrong3, mut wrong4) = (0u64, 0u64);
    let mut curve = Vec::new();
    let every = s.checkpoint_every.max(1);

    for q in 0..s.queries {
        let truth = rng.random_range(0..s.labels);
        let label = Output::new(labels[truth].as_str());
        let preds: BTreeMap<ModelName, Output> =
            models.iter().zip(&names).map(|(m, n)| (n.clone(), Output::new(m.predict_label(q, truth)))).collect();
        for (w, n) in static_wrong.iter_mut().zip(&names) {
            *w += (preds[n] != label) as u64;
        }

        let chosen = exp3_select(&st3, &mut rng);
        wrong3 += (preds[&chosen] != label) as u64;
        let one = BTreeMap::from([(chosen.clone(), preds[&chosen].clone())]);
        st3 = exp3.observe(&st3, &query, &label, &one);

        let (out, _) = exp4.combine(&st4, &query, &names, &preds);
        wrong4 += (out != label) as u64;
        st4 = exp4.observe(&st4, &query, &label, &preds);

        let done = q + 1;
        if done % every == 0 || done == s.queries {
            let d = done as f64;
            curve.push(CurvePoint {
                query: done,
                static_models: static_wrong.iter().map(|&w| w as f64 / d).collect(),
                exp3: wrong3 as f64 / d,
                exp4: wrong4 as f64 / d,
            });
        }
    }
    FailureReport { curve }
}

/// Independent models with equal error rates, combined every query.
#[derive(Debug, Clone)]
pub struct EnsembleScenario {
    pub models: usize,
    pub error_rate: f64,
    pub labels: usize,
    pub queries: u64,
    pub eta: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgreementBucket {
    pub agreeing: usize,
    pub queries: u64,
    pub wrong: u64,
}

#[derive(Debug, Clone)]
pub struct EnsembleReport {
    pub error: f64,
    pub single_model_errors: Vec<f64>,
    pub unanimous_error: f64,
    pub unanimous_fraction: f64,
    /// Queries grouped by how many models agreed with the combined output.
    pub by_agreement: Vec<AgreementBucket>,
    pub final_state: BanditState,
}

pub fn run_ensemble_scenario(s: &EnsembleScenario) -> EnsembleReport {
    let models: Vec<SyntheticModelSpec> = (0..s.models)
        .map(|i| {
            SyntheticModelSpec::default()
                .with_error(s.error_rate, s.seed.wrapping_mul(7_919).wrapping_add(i as u64 + 1))
                .with_labels(s.labels)
        })
        .collect();
    let names = model_names(s.models);
    let policy = Exp4Policy::new(names.clone(), s.eta, LossFn::ZeroOne);
    let mut state = policy.init();
    let query = probe_query();
    let labels: Vec<String> = (0..s.labels).map(|i| i.to_string()).collect();
    let mut rng = StdRng::seed_from_u64(s.seed);
    let mut wrong = 0u64;
    let mut single = vec![0u64; s.models];
    let mut buckets: Vec<AgreementBucket> = (0..=s.models).map(|a| AgreementBucket { agreeing: a, queries: 0, wrong: 0 }).collect();

    for q in 0..s.queries {
        let truth = rng.random_range(0..s.labels);
        let label = Output::new(labels[truth].as_str());
        let preds: BTreeMap<ModelName, Output> =
            models.iter().zip(&names).map(|(m, n)| (n.clone(), Output::new(m.predict_label(q, truth)))).collect();
        for (w, n) in single.iter_mut().zip(&names) {
            *w += (preds[n] != label) as u64;
        }
        let (out, confidence) = policy.combine(&state, &query, &names, &preds);
        let miss = (out != label) as u64;
        wrong += miss;
        let agreeing = (confidence * s.models as f64).round() as usize;
        buckets[agreeing].queries += 1;
        buckets[agreeing].wrong += miss;
        state = policy.observe(&state, &query, &label, &preds);
    }

    let n = s.queries.max(1) as f64;
    let unanimous = &buckets[s.models];
    EnsembleReport {
        error: wrong as f64 / n,
        single_model_errors: single.iter().map(|&w| w as f64 / n).collect(),
        unanimous_error: if unanimous.queries == 0 { 0.0 } else { unanimous.wrong as f64 / unanimous.queries as f64 },
        unanimous_fraction: unanimous.queries as f64 / n,
        by_agreement: buckets,
        final_state: state,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn failure_scenario_is_seed_deterministic() {
        let mut s = FailureScenario::standard(3);
        s.queries = 2_000;
        let (a, b) = (run_failure_scenario(&s), run_failure_scenario(&s));
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.last().query, 2_000);
        assert_eq!(a.at(1_999).unwrap().query, 1_500);
    }

    #[test]
    fn static_errors_track_configured_rates() {
        let mut s = FailureScenario::standard(1);
        s.degradation = None;
        let r = run_failure_scenario(&s);
        for (got, want) in r.last().static_models.iter().zip(&s.error_rates) {
            assert!((got - want).abs() < 0.015, "{got} vs {want}");
        }
    }

    #[test]
    fn near_uniform_weights_give_majority_vote() {
        let s = EnsembleScenario { models: 5, error_rate: 0.3, labels: 2, queries: 10_000, eta: 1e-6, seed: 11 };
        let r = run_ensemble_scenario(&s);
        // binomial: P(3 or more of 5 wrong at 0.3) = 0.16308
        assert!((r.error - 0.16308).abs() < 0.015, "{}", r.error);
        // all five right (0.7^5) or all five wrong (0.3^5)
        assert!((r.unanimous_fraction - 0.17050).abs() < 0.015, "{}", r.unanimous_fraction);
        assert!((r.unanimous_error - 0.00243 / 0.17050).abs() < 0.01, "{}", r.unanimous_error);
        assert_eq!(r.by_agreement.iter().map(|b| b.queries).sum::<u64>(), 10_000);
    }

    #[test]
    fn learned_weights_still_beat_single_models() {
        let s = EnsembleScenario { models: 5, error_rate: 0.3, labels: 2, queries: 10_000, eta: 0.01, seed: 11 };
        let r = run_ensemble_scenario(&s);
        assert!(r.single_model_errors.iter().all(|e| r.error < *e), "{} vs {:?}", r.error, r.single_model_errors);
        assert!(r.unanimous_error < r.error);
    }
}
