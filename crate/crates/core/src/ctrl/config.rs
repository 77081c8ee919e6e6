use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::nn::{MlpSpec, OptimizerKind};
use crate::value::{FitConfig, ValueArch};

/// Which direction the advantage rate perturbs the state along.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvantageDirection {
    /// `a - mu_old(t, x)`.
    #[default]
    Centered,
    /// The pseudo action itself.
    RawAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CtrlConfig {
    /// Trajectories per round (N).
    pub n_trajectories: usize,
    /// Pseudo actions per visited state (M).
    pub n_pseudo: usize,
    /// Policy epochs per round (K).
    pub epochs: usize,
    /// Finite-difference scale of the advantage rate.
    pub eta: f64,
    /// Exploration level.
    pub sigma: f64,
    pub clip: f64,
    pub lr_policy: f64,
    /// KL weight.
    pub beta: f64,
    /// Grid steps used for collection.
    pub n_steps: usize,
    pub rounds: usize,
    pub batch_size: usize,
    pub advantage_direction: AdvantageDirection,
    /// Adds the gradient of the running reward at the policy mean to the
    /// surrogate.
    pub pathwise_kl: bool,
    pub whiten_advantages: bool,
    pub optimizer: OptimizerKind,
    /// Number of classes cycled through by the collected trajectories.
    pub n_classes: usize,
    pub value: FitConfig,
    pub value_arch: ValueArch,
    pub value_net: MlpSpec,
    pub seed: u64,
    /// Draws fresh random numbers every round; off replays round 0's streams.
    pub vary_seed_per_round: bool,
}

impl Default for CtrlConfig {
    fn default() -> Self {
        Self {
            n_trajectories: 256,
            n_pseudo: 4,
            epochs: 4,
            eta: 0.05,
            sigma: 0.1,
            clip: 0.2,
            lr_policy: 1e-3,
            beta: 5.0,
            n_steps: 50,
            rounds: 50,
            batch_size: 256,
            advantage_direction: AdvantageDirection::Centered,
            pathwise_kl: true,
            whiten_advantages: false,
            optimizer: OptimizerKind::default(),
            n_classes: 1,
            value: FitConfig {
                epochs: 10,
                ..FitConfig::default()
            },
            value_arch: ValueArch::default(),
            value_net: MlpSpec::small(2, 1),
            seed: 0,
            vary_seed_per_round: true,
        }
    }
}

impl CtrlConfig {
    pub fn validate(&self) -> Result<()> {
        ensure(self.n_trajectories >= 1 && self.n_pseudo >= 1 && self.epochs >= 1, || {
            "N, M and K must be at least 1".into()
        })?;
        ensure(self.eta > 0.0 && self.sigma > 0.0 && self.clip > 0.0, || {
            format!("eta, sigma and clip must be positive (got {}, {}, {})", self.eta, self.sigma, self.clip)
        })?;
        ensure(self.lr_policy >= 0.0 && self.beta >= 0.0, || {
            "learning rate and KL weight must be non-negative".into()
        })?;
        ensure(self.n_steps >= 1 && self.batch_size >= 1 && self.n_classes >= 1, || {
            "steps, batch size and class count must be positive".into()
        })?;
        self.value.validate()?;
        self.value_net.validate()
    }

    pub fn classes(&self) -> Vec<usize> {
        (0..self.n_trajectories).map(|k| k % self.n_classes).collect()
    }
}
