use jobshop_core::{Family, Size};
use jobshop_gnn::NetworkConfig;
use serde::{Deserialize, Serialize};

use crate::PpoError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub clip_eps: f64,
    pub learning_rate: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    /// Steps per minibatch.
    pub minibatch_size: usize,
    /// Upper bound on passes over the collected data.
    pub epochs: usize,
    pub target_kl: f64,
    pub episodes_per_iteration: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    /// Multiplies the normalized terminal reward.
    pub reward_scale: f64,
    /// Global gradient norm cap; 0 disables clipping.
    pub max_grad_norm: f64,
    /// Standardize advantages over each iteration's data.
    pub normalize_advantages: bool,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip_eps: 0.2,
            learning_rate: 2e-4,
            entropy_coef: 0.005,
            value_coef: 0.5,
            minibatch_size: 128,
            epochs: 8,
            target_kl: 0.02,
            episodes_per_iteration: 64,
            gamma: 1.0,
            gae_lambda: 1.0,
            reward_scale: 1.0,
            max_grad_norm: 0.5,
            normalize_advantages: true,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), PpoError> {
        let check = |ok: bool, what: &str| if ok { Ok(()) } else { Err(PpoError::Config(what.to_string())) };
        check(self.clip_eps > 0.0, "clip_eps must be positive")?;
        check(self.gamma > 0.0 && self.gamma <= 1.0, "gamma must lie in (0, 1]")?;
        check((0.0..=1.0).contains(&self.gae_lambda), "gae_lambda must lie in [0, 1]")?;
        check(self.learning_rate >= 0.0, "learning_rate must be non-negative")?;
        check(self.minibatch_size > 0, "minibatch_size must be positive")?;
        check(self.episodes_per_iteration > 0, "episodes_per_iteration must be positive")?;
        check(self.target_kl > 0.0, "target_kl must be positive")?;
        check(self.max_grad_norm >= 0.0, "max_grad_norm must be non-negative")?;
        check(self.reward_scale > 0.0, "reward_scale must be positive")?;
        check((0.0..1.0).contains(&self.adam_beta1) && (0.0..1.0).contains(&self.adam_beta2), "adam betas must lie in [0, 1)")?;
        Ok(())
    }
}

/// Which instances training and validation draw from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    pub sizes: Vec<Size>,
    pub stochastic: bool,
    pub low: f64,
    pub high: f64,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self {
            sizes: vec![Size::new(4, 4)],
            stochastic: true,
            low: 0.95,
            high: 1.1,
        }
    }
}

impl ProblemConfig {
    /// Family of the `k`-th instance of a batch; sizes are cycled.
    pub fn family(&self, k: usize) -> Family {
        Family {
            size: self.sizes[k % self.sizes.len()],
            stochastic: self.stochastic,
            low: self.low,
            high: self.high,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationConfig {
    pub instances: usize,
    pub scenarios: usize,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            instances: 20,
            scenarios: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub iterations: usize,
    pub problem: ProblemConfig,
    pub validation: ValidationConfig,
    pub network: NetworkConfig,
    pub ppo: PpoConfig,
    /// Graphs per network call during collection, update and validation.
    pub sub_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            iterations: 50,
            problem: ProblemConfig::default(),
            validation: ValidationConfig::default(),
            network: NetworkConfig::default(),
            ppo: PpoConfig::default(),
            sub_batch: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PpoError> {
        self.ppo.validate()?;
        self.network.validate()?;
        if self.problem.sizes.is_empty() {
            return Err(PpoError::Config("problem.sizes is empty".into()));
        }
        if self.problem.stochastic && !(self.problem.low <= 1.0 && 1.0 <= self.problem.high && self.problem.low > 0.0) {
            return Err(PpoError::Config("need 0 < low <= 1 <= high".into()));
        }
        if let Some(s) = self.problem.sizes.iter().find(|s| s.machines > self.network.max_machines) {
            return Err(PpoError::Config(format!(
                "size {s} has more machines than network.max_machines = {}",
                self.network.max_machines
            )));
        }
        if self.validation.instances == 0 || self.validation.scenarios == 0 || self.sub_batch == 0 {
            return Err(PpoError::Config("validation counts and sub_batch must be positive".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, PpoError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| PpoError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_and_defaults() {
        let cfg = TrainConfig::default();
        assert_eq!(TrainConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        let partial = TrainConfig::from_json(r#"{"seed": 3, "ppo": {"epochs": 2}, "problem": {"sizes": ["3x5"]}}"#).unwrap();
        assert_eq!(partial.seed, 3);
        assert_eq!(partial.ppo.epochs, 2);
        assert_eq!(partial.ppo.clip_eps, 0.2);
        assert_eq!(partial.problem.sizes, vec![Size::new(3, 5)]);
        assert!(TrainConfig::from_json(r#"{"ppo": {"clip": 0.1}}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"ppo": {"gamma": 0}}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"ppo": {"gae_lambda": 1.5}}"#).is_err());
    }
}
