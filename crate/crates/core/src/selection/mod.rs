//! Model selection: which models answer a query, how their answers combine,
//! and how feedback moves per-context state.

mod bandit;
mod combine;
mod exp3;
mod exp4;
mod registry;
mod store;

use std::collections::BTreeMap;

use rand::RngCore;

use crate::error::Result;
use crate::types::{FinalPrediction, ModelName, Output, Query};

pub use bandit::{BanditState, RunningMean};
pub use combine::{combine_at_deadline, weighted_combine, DeadlineRules, OutputKind, DEFAULT_AGREEMENT_TOLERANCE};
pub use exp3::{exp3_observe, exp3_select, Exp3Policy};
pub use exp4::{exp4_combine, exp4_observe, Exp4Policy};
pub use registry::{PolicyFactory, PolicyKind, PolicyParams, PolicyRegistry};
pub use store::{ContextStateStore, FileBackedStore, InMemoryStore, StateStoreKind};

/// Per-model view of a policy state, for inspection endpoints.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StateSummary {
    pub query_count: u64,
    pub models: Vec<ModelSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSummary {
    pub model: ModelName,
    pub weight: f64,
    pub probability: f64,
}

/// A selection policy. All functions are pure: state goes in, state comes out.
pub trait SelectionPolicy: Send + Sync + 'static {
    type State: Clone + Send + Sync + 'static;

    fn name(&self) -> &str;

    fn init(&self) -> Self::State;

    /// Models to evaluate for `query`; a nonempty subset of the candidates.
    fn select(&self, state: &Self::State, query: &Query, rng: &mut dyn RngCore) -> Vec<ModelName>;

    /// Combines the predictions that are available. `selected` is what
    /// `select` returned; models absent from `available` never agree.
    fn combine(&self, state: &Self::State, query: &Query, selected: &[ModelName], available: &BTreeMap<ModelName, Output>)
        -> (Output, f64);

    fn observe(&self, state: &Self::State, query: &Query, label: &Output, preds: &BTreeMap<ModelName, Output>) -> Self::State;

    /// Stand-in for a prediction that missed its deadline.
    fn substitute(&self, _state: &Self::State, _model: &ModelName) -> Option<Output> {
        None
    }

    fn encode_state(&self, state: &Self::State) -> Vec<u8>;

    fn decode_state(&self, bytes: &[u8]) -> Result<Self::State>;

    fn summarize(&self, _state: &Self::State) -> StateSummary {
        StateSummary::default()
    }
}

/// Object-safe form of [`SelectionPolicy`] working on serialized state, as
/// held by a [`ContextStateStore`].
pub trait DynPolicy: Send + Sync {
    fn name(&self) -> &str;
    fn candidates(&self) -> &[ModelName];
    fn init_state(&self) -> Vec<u8>;
    fn select(&self, state: &[u8], query: &Query, rng: &mut dyn RngCore) -> Result<Vec<ModelName>>;
    fn combine_at_deadline(
        &self,
        state: &[u8],
        query: &Query,
        selected: &[ModelName],
        arrived: &BTreeMap<ModelName, Output>,
        rules: &DeadlineRules,
    ) -> Result<FinalPrediction>;
    fn observe(&self, state: Option<&[u8]>, query: &Query, label: &Output, preds: &BTreeMap<ModelName, Output>) -> Result<Vec<u8>>;
    fn summarize(&self, state: &[u8]) -> Result<StateSummary>;
}

/// Adapts a typed policy to [`DynPolicy`], checking that selections stay
/// within the candidate set.
pub struct Erased<P> {
    policy: P,
    candidates: Vec<ModelName>,
}

impl<P: SelectionPolicy> Erased<P> {
    pub fn new(policy: P, candidates: Vec<ModelName>) -> Self {
        Erased { policy, candidates }
    }

    pub fn policy(&self) -> &P {
        &self.policy
    }
}

impl<P: SelectionPolicy> DynPolicy for Erased<P> {
    fn name(&self) -> &str {
        self.policy.name()
    }

    fn candidates(&self) -> &[ModelName] {
        &self.candidates
    }

    fn init_state(&self) -> Vec<u8> {
        self.policy.encode_state(&self.policy.init())
    }

    fn select(&self, state: &[u8], query: &Query, rng: &mut dyn RngCore) -> Result<Vec<ModelName>> {
        let state = self.policy.decode_state(state)?;
        let mut picked = self.policy.select(&state, query, rng);
        picked.retain(|m| self.candidates.contains(m));
        picked.dedup();
        if picked.is_empty() {
            return Err(crate::Error::InvalidArgument(format!("policy {} selected no candidate model", self.policy.name())));
        }
        Ok(picked)
    }

    fn combine_at_deadline(
        &self,
        state: &[u8],
        query: &Query,
        selected: &[ModelName],
        arrived: &BTreeMap<ModelName, Output>,
        rules: &DeadlineRules,
    ) -> Result<FinalPrediction> {
        let state = self.policy.decode_state(state)?;
        Ok(combine_at_deadline(&self.policy, &state, query, selected, arrived, rules))
    }

    fn observe(&self, state: Option<&[u8]>, query: &Query, label: &Output, preds: &BTreeMap<ModelName, Output>) -> Result<Vec<u8>> {
        let state = match state {
            Some(b) => self.policy.decode_state(b)?,
            None => self.policy.init(),
        };
        let next = self.policy.observe(&state, query, label, preds);
        Ok(self.policy.encode_state(&next))
    }

    fn summarize(&self, state: &[u8]) -> Result<StateSummary> {
        Ok(self.policy.summarize(&self.policy.decode_state(state)?))
    }
}

pub(crate) fn bandit_summary(state: &BanditState) -> StateSummary {
    let p = state.probabilities();
    StateSummary {
        query_count: state.query_count(),
        models: state
            .models()
            .iter()
            .zip(state.weights())
            .zip(p)
            .map(|((m, &w), p)| ModelSummary { model: m.clone(), weight: w, probability: p })
            .collect(),
    }
}
