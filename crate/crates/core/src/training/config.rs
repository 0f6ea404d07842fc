use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sf_repr::SfConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    Dissc,
    Iac,
}

impl Algo {
    pub fn as_str(&self) -> &'static str {
        match self {
            Algo::Dissc => "dissc",
            Algo::Iac => "iac",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub algo: Algo,
    pub gamma: f64,
    pub lr_central: f64,
    pub lr_pi: f64,
    pub lr_psi: f64,
    pub lr_phi: f64,
    pub lr_beta: f64,
    /// Global-state transitions per central update.
    pub central_batch: usize,
    /// Agent transitions per type per decentralized update.
    pub decentral_batch: usize,
    pub ppo_clip: f64,
    pub ppo_epochs: usize,
    pub entropy_coef: f64,
    pub total_env_steps: u64,
    pub seed: u64,
    pub c_lambda: f64,
    /// Disable to keep β at its initial all-ones value.
    pub beta_updates: bool,
    pub normalize_advantages: bool,
    pub max_grad_norm: f64,
    pub hidden: Vec<usize>,
    /// Central updates between critic target snapshots.
    pub critic_target_period: usize,
    pub sf: SfConfig,
    /// Env steps between checkpoints; 0 writes only the initial and final ones.
    pub checkpoint_interval: u64,
    /// Pairs drawn for the factoredness estimate of each update.
    pub factoredness_pairs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            algo: Algo::Dissc,
            gamma: 0.99,
            lr_central: 1e-4,
            lr_pi: 1e-4,
            lr_psi: 1e-4,
            lr_phi: 1e-4,
            lr_beta: 1e-4,
            central_batch: 64,
            decentral_batch: 128,
            ppo_clip: 0.2,
            ppo_epochs: 4,
            entropy_coef: 0.01,
            total_env_steps: 200_000,
            seed: 0,
            c_lambda: 0.5,
            beta_updates: true,
            normalize_advantages: true,
            max_grad_norm: 5.0,
            hidden: vec![64],
            critic_target_period: 200,
            sf: SfConfig::default(),
            checkpoint_interval: 0,
            factoredness_pairs: 10_000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::config("gamma", "must lie in [0, 1)"));
        }
        for (name, v) in [
            ("lr_central", self.lr_central),
            ("lr_pi", self.lr_pi),
            ("lr_psi", self.lr_psi),
            ("lr_phi", self.lr_phi),
            ("lr_beta", self.lr_beta),
            ("ppo_clip", self.ppo_clip),
            ("c_lambda", self.c_lambda),
            ("max_grad_norm", self.max_grad_norm),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(name, "must be a positive number"));
            }
        }
        if !(self.entropy_coef.is_finite() && self.entropy_coef >= 0.0) {
            return Err(Error::config("entropy_coef", "must be nonnegative"));
        }
        for (name, v) in [
            ("central_batch", self.central_batch),
            ("decentral_batch", self.decentral_batch),
            ("ppo_epochs", self.ppo_epochs),
            ("critic_target_period", self.critic_target_period),
        ] {
            if v == 0 {
                return Err(Error::config(name, "must be positive"));
            }
        }
        if self.hidden.contains(&0) {
            return Err(Error::config("hidden", "layer widths must be positive"));
        }
        self.sf.validate()
    }
}
