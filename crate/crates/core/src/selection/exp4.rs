use std::collections::BTreeMap;

use rand::RngCore;

use super::exp3::clamp_loss;
use super::{bandit_summary, weighted_combine, BanditState, OutputKind, SelectionPolicy, StateSummary};
use crate::error::Result;
use crate::loss::LossFn;
use crate::types::{ModelName, Output, Query};

/// Weighted ensemble over the available predictions.
pub fn exp4_combine(
    state: &BanditState,
    kind: OutputKind,
    selected: &[ModelName],
    available: &BTreeMap<ModelName, Output>,
) -> (Output, f64) {
    weighted_combine(kind, selected, available, |m| state.weight(m).unwrap_or(0.0))
}

/// Full-information update: every model with a prediction has its weight
/// scaled by `exp(-η · L(label, ŷ_i))`.
pub fn exp4_observe(state: &BanditState, label: &Output, preds: &BTreeMap<ModelName, Output>, loss: LossFn) -> BanditState {
    let mut factors = vec![0.0; state.models().len()];
    let mut next = state.clone();
    for (m, pred) in preds {
        if let Some(i) = state.index_of(m) {
            factors[i] = -state.eta() * clamp_loss(loss.loss(label, pred));
            if let Some(x) = pred.parsed_scalar() {
                next.push_scalar(i, x);
            }
        }
    }
    next.apply_log_factors(&factors);
    next.bump_query_count();
    next
}

/// Ensemble policy: every candidate is evaluated on every query.
#[derive(Debug, Clone)]
pub struct Exp4Policy {
    models: Vec<ModelName>,
    eta: f64,
    loss: LossFn,
    agreement_tolerance: f64,
}

impl Exp4Policy {
    pub fn new(models: Vec<ModelName>, eta: f64, loss: LossFn) -> Self {
        Exp4Policy { models, eta, loss, agreement_tolerance: super::DEFAULT_AGREEMENT_TOLERANCE }
    }

    pub fn with_agreement_tolerance(mut self, tol: f64) -> Self {
        self.agreement_tolerance = tol;
        self
    }

    pub fn output_kind(&self) -> OutputKind {
        if self.loss.is_scalar() {
            OutputKind::Scalar { agreement_tolerance: self.agreement_tolerance }
        } else {
            OutputKind::Categorical
        }
    }
}

impl SelectionPolicy for Exp4Policy {
    type State = BanditState;

    fn name(&self) -> &str {
        "exp4"
    }

    fn init(&self) -> BanditState {
        BanditState::new(self.models.clone(), self.eta)
    }

    fn select(&self, state: &BanditState, _query: &Query, _rng: &mut dyn RngCore) -> Vec<ModelName> {
        state.models().to_vec()
    }

    fn combine(
        &self,
        state: &BanditState,
        _query: &Query,
        selected: &[ModelName],
        available: &BTreeMap<ModelName, Output>,
    ) -> (Output, f64) {
        exp4_combine(state, self.output_kind(), selected, available)
    }

    fn observe(&self, state: &BanditState, _query: &Query, label: &Output, preds: &BTreeMap<ModelName, Output>) -> BanditState {
        exp4_observe(state, label, preds, self.loss)
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
