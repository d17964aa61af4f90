use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use super::{DynPolicy, Erased, Exp3Policy, Exp4Policy};
use crate::error::{Error, Result};
use crate::loss::LossFn;
use crate::types::ModelName;

/// Which policy an application uses, as written in config.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PolicyKind {
    Exp3,
    Exp4,
    Custom(String),
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exp3" => Ok(PolicyKind::Exp3),
            "exp4" => Ok(PolicyKind::Exp4),
            _ => match s.strip_prefix("custom:") {
                Some(name) if !name.is_empty() => Ok(PolicyKind::Custom(name.to_string())),
                _ => Err(Error::Config(format!("unknown policy {s:?} (expected exp3, exp4 or custom:NAME)"))),
            },
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyKind::Exp3 => f.write_str("exp3"),
            PolicyKind::Exp4 => f.write_str("exp4"),
            PolicyKind::Custom(n) => write!(f, "custom:{n}"),
        }
    }
}

/// Everything a policy factory gets to build an application's policy.
#[derive(Debug, Clone)]
pub struct PolicyParams {
    pub models: Vec<ModelName>,
    pub eta: f64,
    pub loss: LossFn,
    /// Scalar outputs within this distance of the combined value count as agreeing.
    pub agreement_tolerance: f64,
}

pub type PolicyFactory = Arc<dyn Fn(&PolicyParams) -> Arc<dyn DynPolicy> + Send + Sync>;

/// Named policy constructors. Built-ins are always present; custom policies
/// register at startup under the name used in `custom:NAME`.
#[derive(Clone, Default)]
pub struct PolicyRegistry {
    custom: HashMap<String, PolicyFactory>,
}

impl PolicyRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, factory: PolicyFactory) {
        self.custom.insert(name.into(), factory);
    }

    pub fn contains(&self, kind: &PolicyKind) -> bool {
        match kind {
            PolicyKind::Custom(n) => self.custom.contains_key(n),
            _ => true,
        }
    }

    pub fn build(&self, kind: &PolicyKind, params: &PolicyParams) -> Result<Arc<dyn DynPolicy>> {
        Ok(match kind {
            PolicyKind::Exp3 => {
                Arc::new(Erased::new(Exp3Policy::new(params.models.clone(), params.eta, params.loss), params.models.clone()))
            }
            PolicyKind::Exp4 => Arc::new(Erased::new(
                Exp4Policy::new(params.models.clone(), params.eta, params.loss).with_agreement_tolerance(params.agreement_tolerance),
                params.models.clone(),
            )),
            PolicyKind::Custom(name) => {
                let f = self.custom.get(name).ok_or_else(|| Error::Config(format!("no custom policy registered as {name:?}")))?;
                f(params)
            }
        })
    }
}

impl fmt::Debug for PolicyRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PolicyRegistry").field("custom", &self.custom.keys().collect::<Vec<_>>()).finish()
    }
}
