use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::ctrl::{
    build_advantage_dataset, collect_round, ddpo_baseline_update, ddpo_collect, ddpo_dataset, ppo_update, CtrlConfig,
    SurrogateSpec, TrainableMean,
};
use crate::error::Result;
use crate::nn::{Mlp, Optimizer, ParamVector};
use crate::rng::{self, derive_seed};
use crate::score::{GaussianPolicy, ScoreNet};
use crate::sde::{NoiseSchedule, Trajectory};
use crate::stats::Estimate;
use crate::value::{fit_value, kl_path_estimate, FitConfig, RewardModel, ValueDataset, ValueNet};

const TAG_COLLECT: u64 = 1;
const TAG_ADVANTAGE: u64 = 2;
const TAG_VALUE: u64 = 3;
const TAG_POLICY: u64 = 4;
const TAG_VALUE_INIT: u64 = 5;

/// One row of the per-round metric log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub mean_terminal_reward: f64,
    pub reward_std_error: f64,
    pub kl_estimate: f64,
    pub value_mse: f64,
    pub surrogate: f64,
    pub clip_fraction: f64,
    pub wallclock: f64,
}

impl RoundMetrics {
    /// Equality ignoring wallclock.
    pub fn same_values(&self, other: &RoundMetrics) -> bool {
        let mut a = self.clone();
        a.wallclock = other.wallclock;
        a == *other
    }
}

/// Everything needed to continue training after round `round - 1`.
#[derive(Debug, Clone)]
pub struct CtrlState {
    pub round: usize,
    pub policy: ScoreNet,
    pub value_params: ParamVector,
    pub metrics: Vec<RoundMetrics>,
}

fn round_seed(config: &CtrlConfig, tag: u64, round: usize) -> u64 {
    let idx = if config.vary_seed_per_round { round as u64 } else { 0 };
    derive_seed(config.seed, tag, idx)
}

fn terminal_estimate(trajs: &[Trajectory]) -> Estimate {
    let h: Vec<f64> = trajs.iter().map(|t| t.terminal).collect();
    Estimate::from_samples(&h)
}

/// Fine-tuning loop: collect, fit the value network, build pseudo-action
/// advantages and take clipped policy steps, once per round.
pub struct CtrlTrainer {
    pub config: CtrlConfig,
    pub schedule: NoiseSchedule,
    pub reward: RewardModel,
    /// Frozen pretrained score.
    pub reference: ScoreNet,
    pub state: CtrlState,
}

impl CtrlTrainer {
    pub fn new(config: CtrlConfig, schedule: NoiseSchedule, reward: RewardModel, pretrained: ScoreNet) -> Result<Self> {
        config.validate()?;
        let mlp = Mlp::new(config.value_net.clone())?;
        let mut value_params = mlp.init_params(&mut rng::stream(derive_seed(config.seed, TAG_VALUE_INIT, 0), 0));
        mlp.zero_final_layer(value_params.as_mut_slice());
        let state = CtrlState {
            round: 0,
            policy: pretrained.clone(),
            value_params,
            metrics: Vec::new(),
        };
        Self::from_state(config, schedule, reward, pretrained, state)
    }

    pub fn from_state(
        config: CtrlConfig,
        schedule: NoiseSchedule,
        reward: RewardModel,
        reference: ScoreNet,
        state: CtrlState,
    ) -> Result<Self> {
        config.validate()?;
        // builds once to check the shapes of every piece
        ValueNet::new(
            reward.clone(),
            schedule,
            state.policy.clone(),
            config.value_arch,
            config.value_net.clone(),
            state.value_params.clone(),
        )?;
        Ok(Self {
            config,
            schedule,
            reward,
            reference,
            state,
        })
    }

    pub fn value_net(&self) -> Result<ValueNet<ScoreNet>> {
        ValueNet::new(
            self.reward.clone(),
            self.schedule,
            self.state.policy.clone(),
            self.config.value_arch,
            self.config.value_net.clone(),
            self.state.value_params.clone(),
        )
    }

    /// Runs one round. The state only advances when every stage succeeds.
    pub fn step(&mut self) -> Result<RoundMetrics> {
        let start = Instant::now();
        let cfg = &self.config;
        let n = self.state.round;
        let old = self.state.policy.clone();
        let trajs = {
            let pol = GaussianPolicy::new(&old, cfg.sigma)?;
            collect_round(cfg, &self.schedule, &pol, &self.reference, &self.reward, round_seed(cfg, TAG_COLLECT, n))?
        };
        let reward = terminal_estimate(&trajs);
        let kl = kl_path_estimate(&self.schedule, &trajs, &old, &self.reference)?;

        let mut vnet = self.value_net()?;
        let fit_cfg = FitConfig {
            seed: round_seed(cfg, TAG_VALUE, n),
            ..cfg.value.clone()
        };
        let fit = fit_value(&mut vnet, &ValueDataset::from_trajectories(&trajs)?, &fit_cfg)?;
        let data = build_advantage_dataset(cfg, &vnet, &self.schedule, &self.reference, &trajs, round_seed(cfg, TAG_ADVANTAGE, n))?;

        let mut policy = old.clone();
        let mut opt = Optimizer::new(cfg.optimizer, cfg.lr_policy, policy.n_params());
        let spec = SurrogateSpec {
            clip: cfg.clip,
            beta: cfg.beta,
            pathwise_kl: cfg.pathwise_kl,
        };
        let ppo = ppo_update(&spec, cfg.epochs, cfg.batch_size, &mut policy, &data, &mut opt, round_seed(cfg, TAG_POLICY, n))?;

        let metrics = RoundMetrics {
            round: n,
            mean_terminal_reward: reward.mean,
            reward_std_error: reward.std_error,
            kl_estimate: kl.mean,
            value_mse: fit.best_holdout_mse,
            surrogate: ppo.surrogate_after,
            clip_fraction: ppo.clip_fraction,
            wallclock: start.elapsed().as_secs_f64(),
        };
        self.state.value_params = vnet.params().clone();
        self.state.policy = policy;
        self.state.round += 1;
        self.state.metrics.push(metrics.clone());
        Ok(metrics)
    }

    /// Runs until `config.rounds` rounds are done, calling `on_round` after each.
    pub fn run<F>(&mut self, mut on_round: F) -> Result<()>
    where
        F: FnMut(&CtrlState, &RoundMetrics) -> Result<()>,
    {
        while self.state.round < self.config.rounds {
            let m = self.step()?;
            on_round(&self.state, &m)?;
        }
        Ok(())
    }
}

/// The discrete-time baseline trained with the same budget.
pub struct DdpoTrainer {
    pub config: CtrlConfig,
    pub schedule: NoiseSchedule,
    pub reward: RewardModel,
    pub policy: ScoreNet,
    pub round: usize,
    pub metrics: Vec<RoundMetrics>,
}

impl DdpoTrainer {
    pub fn new(config: CtrlConfig, schedule: NoiseSchedule, reward: RewardModel, pretrained: ScoreNet) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            schedule,
            reward,
            policy: pretrained,
            round: 0,
            metrics: Vec::new(),
        })
    }

    pub fn step(&mut self) -> Result<RoundMetrics> {
        let start = Instant::now();
        let cfg = &self.config;
        let n = self.round;
        let trajs = ddpo_collect(cfg, &self.schedule, &self.policy, &self.reward, round_seed(cfg, TAG_COLLECT, n))?;
        let reward = terminal_estimate(&trajs);
        let data = ddpo_dataset(&self.schedule, &trajs)?;
        let mut policy = self.policy.clone();
        let mut opt = Optimizer::new(cfg.optimizer, cfg.lr_policy, policy.n_params());
        let rep = ddpo_baseline_update(cfg, &mut policy, &data, &mut opt, round_seed(cfg, TAG_POLICY, n))?;
        let metrics = RoundMetrics {
            round: n,
            mean_terminal_reward: reward.mean,
            reward_std_error: reward.std_error,
            kl_estimate: f64::NAN,
            value_mse: f64::NAN,
            surrogate: rep.surrogate_after,
            clip_fraction: rep.clip_fraction,
            wallclock: start.elapsed().as_secs_f64(),
        };
        self.policy = policy;
        self.round += 1;
        self.metrics.push(metrics.clone());
        Ok(metrics)
    }

    pub fn run<F>(&mut self, mut on_round: F) -> Result<()>
    where
        F: FnMut(&ScoreNet, &RoundMetrics) -> Result<()>,
    {
        while self.round < self.config.rounds {
            let m = self.step()?;
            on_round(&self.policy, &m)?;
        }
        Ok(())
    }
}
