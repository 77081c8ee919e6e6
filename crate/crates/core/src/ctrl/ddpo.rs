//! Discrete-time baseline: PPO on the Gaussian transition densities of the
//! DDPM discretization with the terminal reward as advantage.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;

use crate::ctrl::{clipped_objective, CtrlConfig, PpoReport, TrainableMean};
use crate::error::{Error, Result};
use crate::nn::{Optimizer, ParamVector};
use crate::rng;
use crate::score::{GaussianPolicy, MeanField};
use crate::sde::{ddpm_beta, rollout_batch, NoiseSchedule, RolloutSpec, Sampler, TimeGrid, Trajectory};
use crate::value::RewardModel;

use super::collect::attach_terminal_rewards;

/// Observed transitions `x -> x'` with `x' ~ N((x + b mu) / sqrt(1 - b), b I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionDataset {
    pub t: Vec<f64>,
    pub x: Array2<f64>,
    pub next: Array2<f64>,
    pub class: Vec<usize>,
    pub beta_i: Vec<f64>,
    pub logp_old: Vec<f64>,
    pub adv: Vec<f64>,
    pub weight: Vec<f64>,
}

impl TransitionDataset {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<f64>>();
        Self {
            t: pick(&self.t),
            x: self.x.select(Axis(0), idx),
            next: self.next.select(Axis(0), idx),
            class: idx.iter().map(|&i| self.class[i]).collect(),
            beta_i: pick(&self.beta_i),
            logp_old: pick(&self.logp_old),
            adv: pick(&self.adv),
            weight: pick(&self.weight),
        }
    }
}

/// Rolls out `N` trajectories with the DDPM sampler and no exploration
/// beyond the sampler noise.
pub fn ddpo_collect<M: MeanField>(
    config: &CtrlConfig,
    schedule: &NoiseSchedule,
    mean: &M,
    reward: &RewardModel,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    let grid = TimeGrid::uniform(config.n_steps, schedule.horizon)?;
    let spec = RolloutSpec::new(*schedule, grid, seed).with_sampler(Sampler::Ddpm);
    let policy = GaussianPolicy::new(mean, 0.0)?;
    let mut trajs = rollout_batch(&spec, &policy, &config.classes())?;
    attach_terminal_rewards(&mut trajs, reward)?;
    Ok(trajs)
}

fn transition_logp(x: &[f64], next: &[f64], mu: &[f64], b: f64) -> f64 {
    let d = x.len() as f64;
    let s = (1.0 - b).sqrt();
    let sq: f64 = (0..x.len()).map(|j| (next[j] - (x[j] + b * mu[j]) / s).powi(2)).sum();
    -0.5 * sq / b - 0.5 * d * (2.0 * std::f64::consts::PI * b).ln()
}

/// Every transition of every trajectory, with the whitened terminal reward of
/// its trajectory as advantage and weight `1 / (N n)`.
pub fn ddpo_dataset(schedule: &NoiseSchedule, trajs: &[Trajectory]) -> Result<TransitionDataset> {
    let first = trajs.first().ok_or(Error::Empty("trajectory set"))?;
    let d = first.dim;
    let h: Vec<f64> = trajs.iter().map(|t| t.terminal).collect();
    let hm = crate::stats::mean(&h);
    let hs = crate::stats::std_dev(&h);
    let total: usize = trajs.iter().map(|t| t.n_steps()).sum();
    let mut ds = TransitionDataset {
        t: Vec::with_capacity(total),
        x: Array2::zeros((total, d)),
        next: Array2::zeros((total, d)),
        class: Vec::with_capacity(total),
        beta_i: Vec::with_capacity(total),
        logp_old: Vec::with_capacity(total),
        adv: Vec::with_capacity(total),
        weight: Vec::with_capacity(total),
    };
    let mut row = 0;
    for tr in trajs {
        let a = if hs > 0.0 { (tr.terminal - hm) / hs } else { 0.0 };
        let n = tr.n_steps();
        for i in 0..n {
            let b = ddpm_beta(schedule, tr.times[i], tr.dt(i))?;
            for j in 0..d {
                ds.x[[row, j]] = tr.state(i)[j];
                ds.next[[row, j]] = tr.state(i + 1)[j];
            }
            ds.t.push(tr.times[i]);
            ds.class.push(tr.class);
            ds.beta_i.push(b);
            ds.logp_old.push(transition_logp(tr.state(i), tr.state(i + 1), tr.mean(i), b));
            ds.adv.push(a);
            ds.weight.push(1.0 / (trajs.len() * n) as f64);
            row += 1;
        }
    }
    Ok(ds)
}

/// Clipped surrogate on transition likelihood ratios, scaled by `scale`.
pub fn ddpo_surrogate<P: TrainableMean>(
    clip: f64,
    policy: &P,
    data: &TransitionDataset,
    scale: f64,
    grad: Option<&mut [f64]>,
) -> Result<f64> {
    let mu = policy.mean_batch(&data.t, data.x.view(), &data.class)?;
    let (r, d) = mu.dim();
    let mut cot = Array2::zeros((r, d));
    let mut total = 0.0;
    for i in 0..r {
        let b = data.beta_i[i];
        let s = (1.0 - b).sqrt();
        let xr = data.x.row(i).to_vec();
        let nr = data.next.row(i).to_vec();
        let mr = mu.row(i).to_vec();
        let ratio = (transition_logp(&xr, &nr, &mr, b) - data.logp_old[i]).exp();
        let (o, dr) = clipped_objective(ratio, data.adv[i], clip);
        let w = scale * data.weight[i];
        total += w * o;
        for j in 0..d {
            let resid = nr[j] - (xr[j] + b * mr[j]) / s;
            cot[[i, j]] = w * dr * ratio * resid / s;
        }
    }
    if let Some(g) = grad {
        policy.mean_param_vjp(&data.t, data.x.view(), &data.class, cot.view(), g)?;
    }
    Ok(total)
}

fn ddpo_clip_fraction<P: TrainableMean>(clip: f64, policy: &P, data: &TransitionDataset) -> Result<f64> {
    let mu = policy.mean_batch(&data.t, data.x.view(), &data.class)?;
    let outside = (0..data.len())
        .filter(|&i| {
            let lp = transition_logp(&data.x.row(i).to_vec(), &data.next.row(i).to_vec(), &mu.row(i).to_vec(), data.beta_i[i]);
            ((lp - data.logp_old[i]).exp() - 1.0).abs() > clip
        })
        .count();
    Ok(outside as f64 / data.len() as f64)
}

/// `K` epochs of minibatch ascent on [`ddpo_surrogate`].
pub fn ddpo_baseline_update<P: TrainableMean>(
    config: &CtrlConfig,
    policy: &mut P,
    data: &TransitionDataset,
    optimizer: &mut Optimizer,
    seed: u64,
) -> Result<PpoReport> {
    if data.is_empty() {
        return Err(Error::Empty("transition dataset"));
    }
    let before = ddpo_surrogate(config.clip, policy, data, 1.0, None)?;
    let start = policy.param_values().to_vec();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut shuffle = rng::stream(seed, 0);
    let mut steps = 0;
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle);
        for chunk in order.chunks(config.batch_size) {
            let batch = data.subset(chunk);
            let mut g = vec![0.0; policy.n_params()];
            let v = ddpo_surrogate(config.clip, policy, &batch, data.len() as f64 / chunk.len() as f64, Some(&mut g))?;
            if !v.is_finite() || g.iter().any(|x| !x.is_finite()) {
                return Err(Error::Diverged {
                    iteration: epoch,
                    last_good: Some(Box::new(ParamVector::flat(start))),
                });
            }
            for x in &mut g {
                *x = -*x;
            }
            optimizer.step(policy.param_values_mut(), &g)?;
            steps += 1;
        }
    }
    let after = ddpo_surrogate(config.clip, policy, data, 1.0, None)?;
    Ok(PpoReport {
        surrogate_before: before,
        surrogate_after: after,
        clip_fraction: ddpo_clip_fraction(config.clip, policy, data)?,
        steps,
    })
}
