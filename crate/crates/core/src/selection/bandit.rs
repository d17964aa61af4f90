use crate::error::{Error, Result};
use crate::types::ModelName;

/// Running mean of one model's scalar outputs (Welford, unbounded window).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningMean {
    pub mean: f64,
    pub count: u64,
}

impl RunningMean {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        self.mean += (x - self.mean) / self.count as f64;
    }
}

/// Per-context exponential-weights state shared by the built-in policies.
///
/// Weights are kept summing to the number of models; rescaling leaves the
/// selection distribution untouched and keeps values away from under/overflow.
#[derive(Debug, Clone, PartialEq)]
pub struct BanditState {
    models: Vec<ModelName>,
    weights: Vec<f64>,
    eta: f64,
    query_count: u64,
    means: Vec<RunningMean>,
}

const MAGIC: &[u8; 4] = b"BST\x01";

impl BanditState {
    pub fn new(models: Vec<ModelName>, eta: f64) -> Self {
        let k = models.len();
        BanditState { models, weights: vec![1.0; k], eta, query_count: 0, means: vec![RunningMean::default(); k] }
    }

    pub fn models(&self) -> &[ModelName] {
        &self.models
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn query_count(&self) -> u64 {
        self.query_count
    }

    pub fn index_of(&self, model: &ModelName) -> Option<usize> {
        self.models.iter().position(|m| m == model)
    }

    pub fn weight(&self, model: &ModelName) -> Option<f64> {
        self.index_of(model).map(|i| self.weights[i])
    }

    pub fn running_mean(&self, model: &ModelName) -> Option<RunningMean> {
        self.index_of(model).map(|i| self.means[i]).filter(|m| m.count > 0)
    }

    /// Selection probabilities `p_i = s_i / Σ s_j`.
    pub fn probabilities(&self) -> Vec<f64> {
        let total: f64 = self.weights.iter().sum();
        self.weights.iter().map(|w| w / total).collect()
    }

    pub(crate) fn push_scalar(&mut self, i: usize, x: f64) {
        self.means[i].push(x);
    }

    pub(crate) fn bump_query_count(&mut self) {
        self.query_count += 1;
    }

    /// Multiplies weight `i` by `exp(log_factors[i])`, then rescales so the
    /// weights sum to `k`. Falls back to a log-domain update if every scaled
    /// weight underflows.
    pub(crate) fn apply_log_factors(&mut self, log_factors: &[f64]) {
        debug_assert_eq!(log_factors.len(), self.weights.len());
        let mut scaled: Vec<f64> = self.weights.iter().zip(log_factors).map(|(w, f)| w * f.exp()).collect();
        let total: f64 = scaled.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            let logs: Vec<f64> = self.weights.iter().zip(log_factors).map(|(w, f)| w.ln() + f).collect();
            let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            scaled = logs.iter().map(|l| (l - top).exp()).collect();
        }
        self.weights = scaled;
        self.renormalize();
    }

    pub(crate) fn renormalize(&mut self) {
        let k = self.weights.len() as f64;
        let total: f64 = self.weights.iter().sum();
        if total > 0.0 && total.is_finite() {
            for w in &mut self.weights {
                *w = (*w * k / total).max(f64::MIN_POSITIVE);
            }
        } else {
            self.weights.iter_mut().for_each(|w| *w = 1.0);
        }
    }

    /// Versioned flat binary: magic, eta, query count, then per model its
    /// name, weight, scalar mean and count. Little-endian throughout.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + self.models.len() * 40);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.eta.to_le_bytes());
        out.extend_from_slice(&self.query_count.to_le_bytes());
        out.extend_from_slice(&(self.models.len() as u32).to_le_bytes());
        for ((m, w), mean) in self.models.iter().zip(&self.weights).zip(&self.means) {
            out.extend_from_slice(&(m.as_str().len() as u32).to_le_bytes());
            out.extend_from_slice(m.as_str().as_bytes());
            out.extend_from_slice(&w.to_le_bytes());
            out.extend_from_slice(&mean.mean.to_le_bytes());
            out.extend_from_slice(&mean.count.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let bad = |what: &str| Error::Store(format!("corrupt bandit state: {what}"));
        let mut take = |n: usize| -> Result<&[u8]> {
            if r.len() < n {
                return Err(bad("truncated"));
            }
            let (h, t) = r.split_at(n);
            r = t;
            Ok(h)
        };
        if take(4)? != MAGIC {
            return Err(bad("bad magic or version"));
        }
        let f64_at = |b: &[u8]| f64::from_le_bytes(b.try_into().unwrap());
        let u64_at = |b: &[u8]| u64::from_le_bytes(b.try_into().unwrap());
        let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().unwrap());
        let eta = f64_at(take(8)?);
        let query_count = u64_at(take(8)?);
        let k = u32_at(take(4)?) as usize;
        let mut state = BanditState::new(Vec::new(), eta);
        state.query_count = query_count;
        for _ in 0..k {
            let n = u32_at(take(4)?) as usize;
            let name = std::str::from_utf8(take(n)?).map_err(|_| bad("model name"))?;
            state.models.push(ModelName::new(name));
            state.weights.push(f64_at(take(8)?));
            let mean = f64_at(take(8)?);
            let count = u64_at(take(8)?);
            state.means.push(RunningMean { mean, count });
        }
        if !r.is_empty() {
            return Err(bad("trailing bytes"));
        }
        if state.weights.iter().any(|w| w.is_nan() || *w <= 0.0) {
            return Err(bad("non-positive weight"));
        }
        Ok(state)
    }
}
