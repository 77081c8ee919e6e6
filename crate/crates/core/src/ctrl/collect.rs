use ndarray::Array2;

use crate::ctrl::CtrlConfig;
use crate::error::{Error, Result};
use crate::score::{GaussianPolicy, MeanField};
use crate::sde::{rollout_batch, NoiseSchedule, RolloutSpec, Sampler, TimeGrid, Trajectory};
use crate::stats::Estimate;
use crate::value::RewardModel;

/// Sets `h = RM(x_T, c)` on every trajectory and recomputes returns.
pub fn attach_terminal_rewards(trajs: &mut [Trajectory], reward: &RewardModel) -> Result<()> {
    for tr in trajs.iter_mut() {
        let h = reward.eval(tr.terminal_state(), tr.class)?;
        tr.set_terminal_reward(h);
        if tr.rewards.iter().any(|r| !r.is_finite()) {
            return Err(Error::NonFinite { step: 0, what: "running reward" });
        }
    }
    Ok(())
}

/// `N` trajectories of `policy` on the configured grid with KL running
/// rewards against `reference` and terminal rewards from `reward`.
pub fn collect_round<M: MeanField>(
    config: &CtrlConfig,
    schedule: &NoiseSchedule,
    policy: &GaussianPolicy<M>,
    reference: &dyn MeanField,
    reward: &RewardModel,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    let grid = TimeGrid::uniform(config.n_steps, schedule.horizon)?;
    let spec = RolloutSpec::new(*schedule, grid, seed).with_reference(config.beta, reference);
    let mut trajs = rollout_batch(&spec, policy, &config.classes())?;
    attach_terminal_rewards(&mut trajs, reward)?;
    Ok(trajs)
}

/// Mean terminal reward of `n` samples drawn with the policy mean as the
/// action (no exploration) on an `n_steps` grid.
#[allow(clippy::too_many_arguments)]
pub fn terminal_reward_estimate<M: MeanField>(
    schedule: &NoiseSchedule,
    mean: &M,
    reward: &RewardModel,
    sampler: Sampler,
    n_steps: usize,
    n: usize,
    n_classes: usize,
    seed: u64,
) -> Result<Estimate> {
    let samples = terminal_rewards(schedule, mean, reward, sampler, n_steps, n, n_classes, seed)?;
    Ok(Estimate::from_samples(&samples))
}

#[allow(clippy::too_many_arguments)]
pub fn terminal_rewards<M: MeanField>(
    schedule: &NoiseSchedule,
    mean: &M,
    reward: &RewardModel,
    sampler: Sampler,
    n_steps: usize,
    n: usize,
    n_classes: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let (x, classes) = terminal_samples(schedule, mean, sampler, n_steps, n, n_classes, seed)?;
    x.rows().into_iter().zip(classes).map(|(row, c)| reward.eval(&row.to_vec(), c)).collect()
}

/// Terminal states of `n` deterministic-action rollouts and their classes.
pub fn terminal_samples<M: MeanField>(
    schedule: &NoiseSchedule,
    mean: &M,
    sampler: Sampler,
    n_steps: usize,
    n: usize,
    n_classes: usize,
    seed: u64,
) -> Result<(Array2<f64>, Vec<usize>)> {
    let grid = TimeGrid::uniform(n_steps, schedule.horizon)?;
    let spec = RolloutSpec::new(*schedule, grid, seed).with_sampler(sampler);
    let policy = GaussianPolicy::new(mean, 0.0)?;
    let classes: Vec<usize> = (0..n).map(|k| k % n_classes.max(1)).collect();
    let trajs = rollout_batch(&spec, &policy, &classes)?;
    let d = mean.dim();
    let mut x = Array2::zeros((n, d));
    for (mut row, tr) in x.rows_mut().into_iter().zip(&trajs) {
        row.assign(&ndarray::ArrayView1::from(tr.terminal_state()));
    }
    Ok((x, classes))
}
