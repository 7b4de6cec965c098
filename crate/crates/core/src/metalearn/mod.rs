//! Entropy-adaptive first-order meta-learning.

mod adapt;
mod entropy;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adapt::{
    adapt_on_support, cold_start_eval_adapt, inner_adapt, outer_step, AdaptResult, ColdStartAdapt,
    HypergraphObjective, Objective,
};
pub use entropy::{adaptive_rate, assign_rates, behavior_entropy};
pub use train::{train, EpochLog, TrainOutput};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaConfig {
    /// Base inner-loop rate.
    pub alpha0: f64,
    /// Sensitivity of the inner rate to behavior entropy.
    pub beta_ent: f64,
    /// Outer-loop rate.
    pub beta_outer: f64,
    pub inner_steps: usize,
    /// Tasks per outer update.
    pub meta_batch: usize,
    pub epochs: usize,
    /// Set from the run seed rather than read from configuration files.
    #[serde(skip)]
    pub seed: u64,
    /// Global-norm cap applied to every task gradient.
    pub clip_norm: f64,
    /// Use this inner rate for every user instead of the entropy-adaptive one.
    pub fixed_rate: Option<f64>,
    /// Abort once the mean query loss exceeds this multiple of its first-epoch value.
    pub divergence_factor: f64,
}

impl Default for MetaConfig {
    fn default() -> Self {
        MetaConfig {
            alpha0: 0.05,
            beta_ent: 1.0,
            beta_outer: 1e-3,
            inner_steps: 1,
            meta_batch: 8,
            epochs: 30,
            seed: 0,
            clip_norm: 5.0,
            fixed_rate: None,
            divergence_factor: 10.0,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("alpha0", self.alpha0),
            ("beta_ent", self.beta_ent),
            ("beta_outer", self.beta_outer),
            ("clip_norm", self.clip_norm),
            ("divergence_factor", self.divergence_factor),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if let Some(r) = self.fixed_rate {
            if !(r >= 0.0 && r.is_finite()) {
                return Err(Error::InvalidConfig(format!("fixed_rate must be non-negative, got {r}")));
            }
        }
        if self.inner_steps == 0 {
            return Err(Error::InvalidConfig("inner_steps must be at least 1".into()));
        }
        if self.meta_batch == 0 {
            return Err(Error::InvalidConfig("meta_batch must be at least 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
