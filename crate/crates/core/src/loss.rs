//! Bounded loss functions comparing a label with a model output.

use serde::{Deserialize, Serialize};

use crate::types::Output;

/// A loss with range `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[derive(Default)]
pub enum LossFn {
    /// 0 when the outputs are byte-equal, 1 otherwise.
    #[default]
    ZeroOne,
    /// `min(1, |y - ŷ| / scale)` on the parsed scalars.
    ClippedAbsolute { scale: f64 },
}

impl LossFn {
    /// Outputs of a scalar loss are combined numerically; zero-one outputs are labels.
    pub fn is_scalar(&self) -> bool {
        matches!(self, LossFn::ClippedAbsolute { .. })
    }

    pub fn loss(&self, truth: &Output, pred: &Output) -> f64 {
        compute_loss(*self, truth, pred)
    }
}

pub fn compute_loss(loss: LossFn, truth: &Output, pred: &Output) -> f64 {
    match loss {
        LossFn::ZeroOne => {
            if truth.value().as_bytes() == pred.value().as_bytes() {
                0.0
            } else {
                1.0
            }
        }
        LossFn::ClippedAbsolute { scale } => match (truth.parsed_scalar(), pred.parsed_scalar()) {
            (Some(a), Some(b)) => {
                let l = (a - b).abs() / scale;
                if l.is_nan() {
                    1.0
                } else {
                    l.min(1.0)
                }
            }
            _ => {
                tracing::debug!(truth = truth.value(), pred = pred.value(), "unparseable scalar, loss=1");
                1.0
            }
        },
    }
}
