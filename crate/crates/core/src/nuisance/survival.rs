use serde::{Deserialize, Serialize};

use super::hazard::{HazardModel, Transition};
use crate::error::{Error, Result};
use crate::sim::StatePath;

pub const DEFAULT_EPSILON: f64 = 0.01;

/// `P(C > u | X) = exp(-int_0^u gamma(s | X) ds)`, floored at `epsilon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensoringSurvival {
    pub model: HazardModel,
    pub epsilon: f64,
}

impl CensoringSurvival {
    pub fn new(model: HazardModel, epsilon: f64) -> Result<Self> {
        if model.transition != Transition::Censoring {
            return Err(Error::Config(format!(
                "censoring survival needs a censoring hazard, got {}",
                model.transition.label()
            )));
        }
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::Config(format!("epsilon {epsilon} outside (0, 1)")));
        }
        model.validate().map_err(Error::Config)?;
        Ok(CensoringSurvival { model, epsilon })
    }

    pub fn kind(&self) -> &'static str {
        self.model.kind()
    }

    pub fn survival(&self, path: &impl StatePath, u: f64) -> f64 {
        let cum = self.model.cumulative_on_path(path, u);
        (-cum).exp().clamp(self.epsilon, 1.0)
    }

    /// Unclamped survival on a single healthy sojourn from 0 to `u`.
    pub fn healthy_survival(&self, u: f64, w: f64) -> f64 {
        (-self.model.integrate(0.0, u, 0.0, w)).exp()
    }

    /// Predictable hazard at `u`.
    pub fn hazard(&self, path: &impl StatePath, u: f64) -> f64 {
        self.model.rate_on_path(path, u)
    }
}
