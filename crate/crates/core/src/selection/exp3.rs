use std::collections::BTreeMap;

use rand::{Rng, RngCore};

use super::{bandit_summary, weighted_combine, BanditState, OutputKind, SelectionPolicy, StateSummary};
use crate::error::Result;
use crate::loss::LossFn;
use crate::types::{ModelName, Output, Query};

/// Draws model `i` with probability `s_i / Σ s_j`.
pub fn exp3_select<R: Rng + ?Sized>(state: &BanditState, rng: &mut R) -> ModelName {
    let models = state.models();
    assert!(!models.is_empty(), "exp3_select needs at least one model");
    let total: f64 = state.weights().iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (m, w) in models.iter().zip(state.weights()) {
        if u < *w {
            return m.clone();
        }
        u -= w;
    }
    // u landed on the rounding slack past the last weight
    models.last().unwrap().clone()
}

/// Scales the chosen model's weight by `exp(-η · loss / p_i)`, `p_i` taken
/// before the update, then renormalizes.
pub fn exp3_observe(state: &BanditState, chosen: &ModelName, loss: f64) -> BanditState {
    let mut next = state.clone();
    let Some(i) = state.index_of(chosen) else {
        tracing::warn!(model = %chosen, "feedback for a model outside the policy");
        return next;
    };
    let loss = clamp_loss(loss);
    let p = state.probabilities()[i];
    let mut factors = vec![0.0; state.models().len()];
    factors[i] = -state.eta() * loss / p;
    next.apply_log_factors(&factors);
    next.bump_query_count();
    next
}

pub(crate) fn clamp_loss(loss: f64) -> f64 {
    if (0.0..=1.0).contains(&loss) {
        loss
    } else {
        tracing::warn!(loss, "loss outside [0, 1], clamping");
        if loss > 1.0 {
            1.0
        } else {
            0.0
        }
    }
}

/// Single-model bandit: one model per query, drawn from the weight distribution.
#[derive(Debug, Clone)]
pub struct Exp3Policy {
    models: Vec<ModelName>,
    eta: f64,
    loss: LossFn,
}

impl Exp3Policy {
    pub fn new(models: Vec<ModelName>, eta: f64, loss: LossFn) -> Self {
        Exp3Policy { models, eta, loss }
    }
}

impl SelectionPolicy for Exp3Policy {
    type State = BanditState;

    fn name(&self) -> &str {
        "exp3"
    }

    fn init(&self) -> BanditState {
        BanditState::new(self.models.clone(), self.eta)
    }

    fn select(&self, state: &BanditState, _query: &Query, rng: &mut dyn RngCore) -> Vec<ModelName> {
        vec![exp3_select(state, rng)]
    }

    fn combine(
        &self,
        state: &BanditState,
        _query: &Query,
        selected: &[ModelName],
        available: &BTreeMap<ModelName, Output>,
    ) -> (Output, f64) {
        let kind = if self.loss.is_scalar() {
            OutputKind::Scalar { agreement_tolerance: super::DEFAULT_AGREEMENT_TOLERANCE }
        } else {
            OutputKind::Categorical
        };
        weighted_combine(kind, selected, available, |m| state.weight(m).unwrap_or(0.0))
    }

    /// Each prediction in `preds` is treated as an arm pull importance-weighted
    /// by its pre-update probability. Callers feed back the arm `select` drew.
    fn observe(&self, state: &BanditState, _query: &Query, label: &Output, preds: &BTreeMap<ModelName, Output>) -> BanditState {
        let p = state.probabilities();
        let mut factors = vec![0.0; state.models().len()];
        let mut next = state.clone();
        for (m, pred) in preds {
            if let Some(i) = state.index_of(m) {
                factors[i] = -state.eta() * clamp_loss(self.loss.loss(label, pred)) / p[i];
                if let Some(x) = pred.parsed_scalar() {
                    next.push_scalar(i, x);
                }
            }
        }
        next.apply_log_factors(&factors);
        next.bump_query_count();
        next
    }

    fn substitute(&self, state: &BanditState, model: &ModelName) -> Option<Output> {
        if !self.loss.is_scalar() {
            return None;
        }
        state.running_mean(model).map(|m| Output::from_scalar(m.mean))
    }

    fn encode_state(&self, state: &BanditState) -> Vec<u8> {
        state.encode()
    }

    fn decode_state(&self, bytes: &[u8]) -> Result<BanditState> {
        BanditState::decode(bytes)
    }

    fn summarize(&self, state: &BanditState) -> StateSummary {
        bandit_summary(state)
    }
}
