use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::ctrl::{attach_terminal_rewards, collect_round, CtrlConfig};
use crate::error::{ensure, Result};
use crate::experiments::Task;
use crate::nn::MlpSpec;
use crate::rng::{self, derive_seed};
use crate::score::{GaussianPolicy, ScoreNet};
use crate::sde::{rollout_batch, RolloutSpec, TimeGrid, Trajectory};
use crate::stats::Estimate;
use crate::value::{fit_value, value_mse, FitConfig, ValueArch, ValueDataset, ValueNet};

/// Held-out value error of each value architecture on rollouts of the
/// pretrained sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSetup {
    pub n_trajectories: usize,
    pub n_holdout_trajectories: usize,
    pub n_steps: usize,
    pub sigma: f64,
    /// Held-out trajectories whose states get Monte Carlo value targets.
    pub n_target_trajectories: usize,
    /// Every `node_stride`-th node of those trajectories is scored.
    pub node_stride: usize,
    /// Continuations averaged per scored state.
    pub n_continuations: usize,
    pub fit: FitConfig,
    pub value_net: MlpSpec,
    pub seeds: Vec<u64>,
}

impl Default for AblationSetup {
    fn default() -> Self {
        Self {
            n_trajectories: 512,
            n_holdout_trajectories: 256,
            n_steps: 50,
            sigma: 0.1,
            n_target_trajectories: 64,
            node_stride: 5,
            n_continuations: 256,
            fit: FitConfig {
                epochs: 20,
                ..FitConfig::default()
            },
            value_net: MlpSpec::small(2, 1),
            seeds: vec![0, 1, 2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub seed: u64,
    pub name: String,
    /// Squared error against held-out returns.
    pub holdout_mse: f64,
    /// Squared error against averaged continuation returns.
    pub value_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    /// Configuration with the lowest `value_mse` for each seed.
    pub best: Vec<String>,
}

impl AblationReport {
    /// True when `name` wins on every seed.
    pub fn always_best(&self, name: &str) -> bool {
        !self.best.is_empty() && self.best.iter().all(|b| b == name)
    }
}

impl AblationSetup {
    pub fn run(&self, task: &Task, pretrained: &ScoreNet) -> Result<AblationReport> {
        let mut rows = Vec::new();
        let mut best = Vec::new();
        let policy = GaussianPolicy::new(pretrained, self.sigma)?;
        for &seed in &self.seeds {
            let collect = |n: usize, tag: u64| {
                let cfg = CtrlConfig {
                    n_trajectories: n,
                    n_steps: self.n_steps,
                    sigma: self.sigma,
                    ..CtrlConfig::default()
                };
                collect_round(&cfg, &task.schedule, &policy, pretrained, &task.reward, derive_seed(seed, tag, 0))
            };
            let train = ValueDataset::from_trajectories(&collect(self.n_trajectories, 21)?)?;
            let hold_trajs = collect(self.n_holdout_trajectories, 22)?;
            let hold = ValueDataset::from_trajectories(&hold_trajs)?;
            let targets = self.value_targets(task, &policy, pretrained, &hold_trajs, derive_seed(seed, 25, 0))?;
            let mut winner: Option<(f64, &str)> = None;
            for (name, arch) in ValueArch::ablation() {
                let mut vnet = ValueNet::init(
                    task.reward.clone(),
                    task.schedule,
                    pretrained.clone(),
                    arch,
                    self.value_net.clone(),
                    &mut rng::stream(derive_seed(seed, 23, 0), 0),
                )?;
                let cfg = FitConfig { seed: derive_seed(seed, 24, 0), ..self.fit.clone() };
                fit_value(&mut vnet, &train, &cfg)?;
                let mse = value_mse(&vnet, &targets)?;
                if winner.is_none_or(|(m, _)| mse < m) {
                    winner = Some((mse, name));
                }
                rows.push(AblationRow {
                    seed,
                    name: name.to_string(),
                    holdout_mse: value_mse(&vnet, &hold)?,
                    value_mse: mse,
                });
            }
            best.push(winner.map(|w| w.1.to_string()).unwrap_or_default());
        }
        Ok(AblationReport { rows, best })
    }

    /// States on a sparse subset of `trajs` with the mean return of
    /// `n_continuations` fresh rollouts from each.
    fn value_targets(
        &self,
        task: &Task,
        policy: &GaussianPolicy<&ScoreNet>,
        reference: &ScoreNet,
        trajs: &[Trajectory],
        seed: u64,
    ) -> Result<ValueDataset> {
        ensure(self.node_stride >= 1 && self.n_continuations >= 1, || {
            "node stride and continuation count must be positive".into()
        })?;
        let grid = TimeGrid::uniform(self.n_steps, task.schedule.horizon)?;
        let chosen = &trajs[..self.n_target_trajectories.min(trajs.len())];
        let d = chosen[0].dim;
        let k = self.n_continuations;
        let (mut t, mut xs, mut target) = (Vec::new(), Vec::new(), Vec::new());
        for node in (0..self.n_steps).step_by(self.node_stride) {
            let mut init = Array2::zeros((chosen.len() * k, d));
            for (r, tr) in chosen.iter().enumerate() {
                for c in 0..k {
                    init.row_mut(r * k + c).assign(&ArrayView1::from(tr.state(node)));
                }
            }
            let spec = RolloutSpec::new(task.schedule, grid.clone(), derive_seed(seed, node as u64, 0))
                .with_reference(0.0, reference)
                .with_init(init)
                .with_start(node);
            let mut conts = rollout_batch(&spec, policy, &vec![0; chosen.len() * k])?;
            attach_terminal_rewards(&mut conts, &task.reward)?;
            for (r, tr) in chosen.iter().enumerate() {
                let g: Vec<f64> = conts[r * k..(r + 1) * k].iter().map(|c| c.returns[0]).collect();
                t.push(grid.nodes()[node]);
                xs.extend_from_slice(tr.state(node));
                target.push(Estimate::from_samples(&g).mean);
            }
        }
        let n = t.len();
        ValueDataset::new(t, Array2::from_shape_vec((n, d), xs).expect("rows of length d"), vec![0; n], target)
    }
}
