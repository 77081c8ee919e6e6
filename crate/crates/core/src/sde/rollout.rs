//! Batched rollouts of the controlled reverse SDE and their on-disk format.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};
use crate::score::{GaussianPolicy, MeanField};
use crate::sde::{NoiseSchedule, TimeGrid};

const TRAJ_MAGIC: &[u8; 8] = b"CTRLTRAJ";
const TRAJ_VERSION: u32 = 1;

/// How a sampled action advances the state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampler {
    #[default]
    EulerMaruyama,
    /// The action takes the place of the score in the ancestral update.
    Ddpm,
}

/// One rollout on a grid of `n` steps in dimension `dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dim: usize,
    pub class: usize,
    /// `n + 1` reverse-time nodes.
    pub times: Vec<f64>,
    /// `(n + 1) * dim`, row-major.
    pub states: Vec<f64>,
    /// `n * dim` sampled actions.
    pub actions: Vec<f64>,
    /// `n * dim` policy means at the visited states.
    pub means: Vec<f64>,
    /// Action log-densities; empty when the policy was deterministic.
    pub logp: Vec<f64>,
    /// Running rewards, already multiplied by the step length.
    pub rewards: Vec<f64>,
    pub terminal: f64,
    /// Returns-to-go, `n + 1` entries with the last equal to `terminal`.
    pub returns: Vec<f64>,
}

impl Trajectory {
    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn is_deterministic(&self) -> bool {
        self.logp.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn action(&self, i: usize) -> &[f64] {
        &self.actions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn mean(&self, i: usize) -> &[f64] {
        &self.means[i * self.dim..(i + 1) * self.dim]
    }

    pub fn terminal_state(&self) -> &[f64] {
        self.state(self.n_steps())
    }

    pub fn dt(&self, i: usize) -> f64 {
        self.times[i + 1] - self.times[i]
    }

    /// Sets the terminal reward and recomputes returns-to-go.
    pub fn set_terminal_reward(&mut self, h: f64) {
        self.terminal = h;
        let n = self.n_steps();
        self.returns = vec![0.0; n + 1];
        self.returns[n] = h;
        for i in (0..n).rev() {
            self.returns[i] = self.rewards[i] + self.returns[i + 1];
        }
    }

    pub fn total_running_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }

    /// `R_i = r_i + R_{i+1}` and `R_n = h`, exactly.
    pub fn returns_consistent(&self) -> bool {
        let n = self.n_steps();
        self.returns.len() == n + 1
            && self.returns[n] == self.terminal
            && (0..n).all(|i| self.returns[i] == self.rewards[i] + self.returns[i + 1])
    }
}

/// Running-reward reference: `r = -(beta / 2) g^2 |mu - mu_ref|^2`.
#[derive(Clone, Copy)]
pub struct RunningReference<'a> {
    pub beta: f64,
    pub mean: &'a dyn MeanField,
}

/// Everything except the policy that determines a batch of rollouts.
#[derive(Clone)]
pub struct RolloutSpec<'a> {
    pub schedule: NoiseSchedule,
    pub grid: TimeGrid,
    pub sampler: Sampler,
    pub seed: u64,
    pub reference: Option<RunningReference<'a>>,
    /// Initial states; standard normal draws when `None`.
    pub init: Option<Array2<f64>>,
    /// Grid node the rollouts start from.
    pub start: usize,
}

impl<'a> RolloutSpec<'a> {
    pub fn new(schedule: NoiseSchedule, grid: TimeGrid, seed: u64) -> Self {
        Self {
            schedule,
            grid,
            sampler: Sampler::EulerMaruyama,
            seed,
            reference: None,
            init: None,
            start: 0,
        }
    }

    pub fn with_sampler(mut self, sampler: Sampler) -> Self {
        self.sampler = sampler;
        self
    }

    pub fn with_reference(mut self, beta: f64, mean: &'a dyn MeanField) -> Self {
        self.reference = Some(RunningReference { beta, mean });
        self
    }

    pub fn with_init(mut self, init: Array2<f64>) -> Self {
        self.init = Some(init);
        self
    }

    /// Starts at node `start` of the grid; pair with [`RolloutSpec::with_init`].
    pub fn with_start(mut self, start: usize) -> Self {
        self.start = start;
        self
    }
}

/// Single rollout; trajectory `0` of [`rollout_batch`] with the same spec.
pub fn rollout<M: MeanField>(spec: &RolloutSpec, policy: &GaussianPolicy<M>, class: usize) -> Result<Trajectory> {
    Ok(rollout_batch(spec, policy, &[class])?.remove(0))
}

/// Rolls out one trajectory per entry of `classes`. Trajectory `k` draws all
/// of its noise from stream `k` of the spec seed, so results do not depend on
/// how many trajectories share a batch.
pub fn rollout_batch<M: MeanField>(
    spec: &RolloutSpec,
    policy: &GaussianPolicy<M>,
    classes: &[usize],
) -> Result<Vec<Trajectory>> {
    if classes.is_empty() {
        return Err(Error::Empty("rollout batch"));
    }
    if spec.grid.horizon() != spec.schedule.horizon {
        return Err(Error::InvalidParameter(format!(
            "grid horizon {} differs from schedule horizon {}",
            spec.grid.horizon(),
            spec.schedule.horizon
        )));
    }
    let d = policy.mean.dim();
    let b = classes.len();
    let n = spec.grid.n_steps();
    if spec.start >= n {
        return Err(Error::InvalidParameter(format!("start node {} is not before the last of {n}", spec.start)));
    }
    let nodes = spec.grid.nodes();
    let sigma = policy.sigma;
    let deterministic = policy.is_deterministic();
    let mut rngs: Vec<StreamRng> = (0..b as u64).map(|k| rng::stream(spec.seed, k)).collect();

    let mut x = match &spec.init {
        Some(init) => {
            if init.dim() != (b, d) {
                return Err(Error::ShapeMismatch {
                    expected: b * d,
                    got: init.len(),
                });
            }
            init.clone()
        }
        None => {
            let mut x = Array2::zeros((b, d));
            for (k, r) in rngs.iter_mut().enumerate() {
                for j in 0..d {
                    x[[k, j]] = r.sample(StandardNormal);
                }
            }
            x
        }
    };

    let mut out: Vec<Trajectory> = classes
        .iter()
        .map(|&c| Trajectory {
            dim: d,
            class: c,
            times: nodes[spec.start..].to_vec(),
            states: Vec::with_capacity((n + 1) * d),
            actions: Vec::with_capacity(n * d),
            means: Vec::with_capacity(n * d),
            logp: if deterministic { Vec::new() } else { Vec::with_capacity(n) },
            rewards: Vec::with_capacity(n),
            terminal: 0.0,
            returns: Vec::new(),
        })
        .collect();
    push_states(&mut out, x.view());

    let log_norm = -0.5 * d as f64 * (2.0 * std::f64::consts::PI * sigma * sigma).ln();
    for i in spec.start..n {
        let t = nodes[i];
        let dt = spec.grid.dt(i);
        let tv = vec![t; b];
        let mu = policy.mean.mean_batch(&tv, x.view(), classes)?;
        let mu_ref = match &spec.reference {
            Some(r) => Some(r.mean.mean_batch(&tv, x.view(), classes)?),
            None => None,
        };
        let g2 = spec.schedule.g2_reverse(t);
        let ddpm_beta = match spec.sampler {
            Sampler::Ddpm => Some(crate::sde::ddpm_beta(&spec.schedule, t, dt)?),
            Sampler::EulerMaruyama => None,
        };
        for k in 0..b {
            let r = &mut rngs[k];
            let tr = &mut out[k];
            let mut sq = 0.0;
            let mut a = vec![0.0; d];
            for j in 0..d {
                let m = mu[[k, j]];
                a[j] = if deterministic {
                    m
                } else {
                    let z: f64 = r.sample(StandardNormal);
                    sq += z * z;
                    m + sigma * z
                };
            }
            if !deterministic {
                tr.logp.push(log_norm - 0.5 * sq);
            }
            let reward = match (&spec.reference, &mu_ref) {
                (Some(rr), Some(mr)) => {
                    let dist: f64 = (0..d).map(|j| (mu[[k, j]] - mr[[k, j]]).powi(2)).sum();
                    -0.5 * rr.beta * g2 * dist * dt
                }
                _ => 0.0,
            };
            tr.rewards.push(reward);
            for j in 0..d {
                let xi: f64 = r.sample(StandardNormal);
                let xv = x[[k, j]];
                x[[k, j]] = match ddpm_beta {
                    None => xv + (0.5 * g2 * xv + g2 * a[j]) * dt + (g2 * dt).sqrt() * xi,
                    Some(bi) => (xv + bi * a[j]) / (1.0 - bi).sqrt() + bi.sqrt() * xi,
                };
                tr.means.push(mu[[k, j]]);
            }
            tr.actions.extend_from_slice(&a);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: i, what: "state" });
        }
        push_states(&mut out, x.view());
    }
    for tr in &mut out {
        tr.set_terminal_reward(0.0);
    }
    Ok(out)
}

fn push_states(out: &mut [Trajectory], x: ArrayView2<f64>) {
    for (tr, row) in out.iter_mut().zip(x.rows()) {
        tr.states.extend(row.iter());
    }
}

/// Writes trajectories column by column:
/// `magic | version u32 | count u64`, then per trajectory
/// `dim u32 | n u32 | class u32 | deterministic u8 | terminal f64` followed by the
/// columns step index, t, x, a, mean, logp and r.
pub fn write_trajectories<W: Write>(mut w: W, trajs: &[Trajectory]) -> Result<()> {
    w.write_all(TRAJ_MAGIC)?;
    w.write_u32::<LittleEndian>(TRAJ_VERSION)?;
    w.write_u64::<LittleEndian>(trajs.len() as u64)?;
    for tr in trajs {
        let n = tr.n_steps();
        w.write_u32::<LittleEndian>(tr.dim as u32)?;
        w.write_u32::<LittleEndian>(n as u32)?;
        w.write_u32::<LittleEndian>(tr.class as u32)?;
        w.write_u8(tr.is_deterministic() as u8)?;
        w.write_f64::<LittleEndian>(tr.terminal)?;
        for i in 0..=n {
            w.write_u32::<LittleEndian>(i as u32)?;
        }
        let cols: [&[f64]; 6] = [&tr.times, &tr.states, &tr.actions, &tr.means, &tr.logp, &tr.rewards];
        for col in cols {
            for &v in col {
                w.write_f64::<LittleEndian>(v)?;
            }
        }
    }
    Ok(())
}

pub fn read_trajectories<R: Read>(mut r: R) -> Result<Vec<Trajectory>> {
    let bad = |m: &str| Error::Checkpoint(format!("trajectory file: {m}"));
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != TRAJ_MAGIC {
        return Err(bad("bad magic"));
    }
    if r.read_u32::<LittleEndian>()? != TRAJ_VERSION {
        return Err(bad("unsupported version"));
    }
    let count = r.read_u64::<LittleEndian>()? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let dim = r.read_u32::<LittleEndian>()? as usize;
        let n = r.read_u32::<LittleEndian>()? as usize;
        let class = r.read_u32::<LittleEndian>()? as usize;
        let deterministic = r.read_u8()? != 0;
        let terminal = r.read_f64::<LittleEndian>()?;
        for i in 0..=n {
            if r.read_u32::<LittleEndian>()? as usize != i {
                return Err(bad("step index out of order"));
            }
        }
        let mut col = |len: usize| -> Result<Vec<f64>> {
            (0..len).map(|_| Ok(r.read_f64::<LittleEndian>()?)).collect()
        };
        let times = col(n + 1)?;
        let states = col((n + 1) * dim)?;
        let actions = col(n * dim)?;
        let means = col(n * dim)?;
        let logp = col(if deterministic { 0 } else { n })?;
        let rewards = col(n)?;
        let mut tr = Trajectory {
            dim,
            class,
            times,
            states,
            actions,
            means,
            logp,
            rewards,
            terminal: 0.0,
            returns: Vec::new(),
        };
        tr.set_terminal_reward(terminal);
        out.push(tr);
    }
    Ok(out)
}
