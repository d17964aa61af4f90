use std::collections::BTreeMap;

use super::SelectionPolicy;
use crate::types::{FinalPrediction, ModelName, Output, Query};

/// Relative scalar agreement tolerance: `|ŷ - final| <= tol · max(1, |final|)`.
pub const DEFAULT_AGREEMENT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OutputKind {
    /// Outputs are labels; the heaviest label wins.
    Categorical,
    /// Outputs are numbers; the weighted mean wins.
    Scalar { agreement_tolerance: f64 },
}

/// Weighted vote (or weighted mean) over `available`, with confidence equal
/// to the fraction of `selected` that agrees with the result.
///
/// `weight_of` gives each model's unnormalized weight. Scalar combining
/// falls back to voting when no available output parses as a number.
pub fn weighted_combine(
    kind: OutputKind,
    selected: &[ModelName],
    available: &BTreeMap<ModelName, Output>,
    weight_of: impl Fn(&ModelName) -> f64,
) -> (Output, f64) {
    let weights: Vec<(&Output, f64)> = available.iter().map(|(m, o)| (o, weight_of(m).max(0.0))).collect();
    let denom = selected.len().max(available.len()).max(1) as f64;

    if let OutputKind::Scalar { agreement_tolerance } = kind {
        let numeric: Vec<(f64, f64)> = weights.iter().filter_map(|(o, w)| o.parsed_scalar().map(|x| (x, *w))).collect();
        if !numeric.is_empty() {
            let mut total: f64 = numeric.iter().map(|(_, w)| w).sum();
            let mean = if total > 0.0 {
                numeric.iter().map(|(x, w)| x * w).sum::<f64>() / total
            } else {
                total = numeric.len() as f64;
                numeric.iter().map(|(x, _)| x).sum::<f64>() / total
            };
            let tol = agreement_tolerance * mean.abs().max(1.0);
            let agree = numeric.iter().filter(|(x, _)| (x - mean).abs() <= tol).count();
            return (Output::from_scalar(mean), agree as f64 / denom);
        }
    }

    let total: f64 = weights.iter().map(|(_, w)| w).sum();
    let mut votes: BTreeMap<&str, f64> = BTreeMap::new();
    for (o, w) in &weights {
        let share = if total > 0.0 { w / total } else { 1.0 };
        *votes.entry(o.value()).or_default() += share;
    }
    // BTreeMap iterates labels in byte order, so strict `>` keeps the smallest on ties.
    let mut best: Option<(&str, f64)> = None;
    for (label, v) in &votes {
        match best {
            Some((_, bv)) if *v <= bv => {}
            _ => best = Some((label, *v)),
        }
    }
    let Some((label, _)) = best else {
        return (Output::new(""), 0.0);
    };
    let agree = weights.iter().filter(|(o, _)| o.value() == label).count();
    (Output::new(label), agree as f64 / denom)
}

/// Fallback parameters applied after combining.
#[derive(Debug, Clone)]
pub struct DeadlineRules {
    pub confidence_threshold: f64,
    pub default_output: Output,
}

/// Combines whatever arrived by the deadline. Selected models that are
/// missing get the policy's substitute if it has one; below the confidence
/// threshold the default output is returned instead.
pub fn combine_at_deadline<P: SelectionPolicy + ?Sized>(
    policy: &P,
    state: &P::State,
    query: &Query,
    selected: &[ModelName],
    arrived: &BTreeMap<ModelName, Output>,
    rules: &DeadlineRules,
) -> FinalPrediction {
    let mut available: BTreeMap<ModelName, Output> =
        arrived.iter().filter(|(m, _)| selected.contains(m)).map(|(m, o)| (m.clone(), o.clone())).collect();
    let used = available.len();
    let missing = selected.len().saturating_sub(used);
    for m in selected {
        if !available.contains_key(m) {
            if let Some(sub) = policy.substitute(state, m) {
                available.insert(m.clone(), sub);
            }
        }
    }
    if available.is_empty() {
        return FinalPrediction::default_output(&rules.default_output, selected.len());
    }
    let (output, confidence) = policy.combine(state, query, selected, &available);
    let confidence = confidence.clamp(0.0, 1.0);
    if confidence < rules.confidence_threshold {
        return FinalPrediction {
            output: rules.default_output.clone(),
            confidence,
            models_used: used as u32,
            models_missing: missing as u32,
            is_default: true,
        };
    }
    FinalPrediction { output, confidence, models_used: used as u32, models_missing: missing as u32, is_default: false }
}
