use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::ctrl::{policy_gradient_samples, trajectory_records, AffineMean, CtrlConfig};
use crate::error::{Error, Result};
use crate::oracle::{fd_objective_gradient, LinearPolicy, LqInstance, QuadraticValue};
use crate::score::GaussianPolicy;
use crate::sde::{rollout_batch, NoiseSchedule, RolloutSpec, TimeGrid, Trajectory};
use crate::stats::Estimate;
use crate::value::Critic;

/// One-dimensional LQ problem used by the policy-gradient and
/// performance-difference checks. Policies are `a ~ N(k x + l, sigma^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LqSetup {
    pub schedule: NoiseSchedule,
    pub n_steps: usize,
    pub w: f64,
    pub k_ref: f64,
    pub l_ref: f64,
    pub h2: f64,
    pub x_star: f64,
    pub sigma: f64,
    /// Gains `(k, l)` of the policy being differentiated.
    pub theta: [f64; 2],
    /// Gains of the second policy in the performance-difference check.
    pub theta_new: [f64; 2],
    pub n_trajectories: usize,
    pub n_pdl_trajectories: usize,
    pub fd_step: f64,
    pub seed: u64,
}

impl Default for LqSetup {
    fn default() -> Self {
        Self {
            schedule: NoiseSchedule::constant(1.0, 1.0).expect("valid schedule"),
            n_steps: 100,
            w: 1.0,
            k_ref: -0.5,
            l_ref: 0.25,
            h2: 1.0,
            x_star: 1.0,
            sigma: 0.3,
            theta: [-0.2, 0.5],
            theta_new: [0.3, 0.8],
            n_trajectories: 2000,
            n_pdl_trajectories: 5000,
            fd_step: 1e-3,
            seed: 0,
        }
    }
}

/// Exact discrete value of a linear policy, exposed as a critic on the grid.
pub struct LqCritic {
    pub value: QuadraticValue,
    pub grid: TimeGrid,
}

impl LqCritic {
    fn node(&self, t: f64) -> Result<usize> {
        let nodes = self.grid.nodes();
        let i = nodes.partition_point(|&s| s < t - 1e-12);
        if i < nodes.len() && (nodes[i] - t).abs() <= 1e-9 {
            Ok(i)
        } else {
            Err(Error::InvalidParameter(format!("time {t} is not a grid node")))
        }
    }
}

impl Critic for LqCritic {
    fn value_batch(&self, t: &[f64], x: ArrayView2<f64>, _class: &[usize]) -> Result<Vec<f64>> {
        t.iter().enumerate().map(|(k, &ti)| Ok(self.value.eval(self.node(ti)?, x[[k, 0]]))).collect()
    }

    fn grad_x_batch(&self, t: &[f64], x: ArrayView2<f64>, _class: &[usize]) -> Result<Array2<f64>> {
        let mut g = Array2::zeros((t.len(), 1));
        for (k, &ti) in t.iter().enumerate() {
            g[[k, 0]] = self.value.grad(self.node(ti)?, x[[k, 0]]);
        }
        Ok(g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateCheck {
    pub name: String,
    pub pg_mean: f64,
    pub pg_se: f64,
    pub fd_mean: f64,
    pub fd_se: f64,
    pub z: f64,
}

impl CoordinateCheck {
    pub fn passed(&self) -> bool {
        self.z < 3.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdlCheck {
    /// `V^new - V^old` at the initial distribution, from the closed form.
    pub value_gap: f64,
    /// `E sum_i q_old(t_i, X_i, a_i) dt_i` along trajectories of the new policy.
    pub q_integral: f64,
    pub q_integral_se: f64,
    pub z: f64,
}

impl PdlCheck {
    pub fn passed(&self) -> bool {
        self.z < 3.0
    }
}

impl LqSetup {
    pub fn instance(&self) -> Result<LqInstance> {
        let inst = LqInstance {
            schedule: self.schedule,
            grid: TimeGrid::uniform(self.n_steps, self.schedule.horizon)?,
            w: self.w,
            k_ref: self.k_ref,
            l_ref: self.l_ref,
            h2: self.h2,
            x_star: self.x_star,
        };
        inst.validate()?;
        Ok(inst)
    }

    fn reference(&self) -> Result<AffineMean> {
        AffineMean::new(self.k_ref, vec![self.l_ref])
    }

    fn rollouts(&self, inst: &LqInstance, theta: &[f64], n: usize, seed: u64) -> Result<Vec<Trajectory>> {
        let reference = self.reference()?;
        let spec = RolloutSpec::new(self.schedule, inst.grid.clone(), seed).with_reference(self.w, &reference);
        let policy = GaussianPolicy::new(AffineMean::new(theta[0], vec![theta[1]])?, self.sigma)?;
        let mut trajs = rollout_batch(&spec, &policy, &vec![0; n])?;
        for tr in &mut trajs {
            let h = inst.terminal_reward(tr.terminal_state()[0]);
            tr.set_terminal_reward(h);
        }
        Ok(trajs)
    }

    /// Policy-gradient estimate at `theta` against central finite differences
    /// of the objective under common random numbers. `corrupt` negates the
    /// advantages, which must make the check fail.
    pub fn policy_gradient_check(&self, corrupt: bool) -> Result<Vec<CoordinateCheck>> {
        let inst = self.instance()?;
        let n = self.n_steps;
        let pi = LinearPolicy::constant(n, self.theta[0], self.theta[1], self.sigma);
        let critic = LqCritic {
            value: inst.evaluate(&pi)?,
            grid: inst.grid.clone(),
        };
        let config = CtrlConfig {
            sigma: self.sigma,
            beta: self.w,
            n_steps: n,
            ..CtrlConfig::default()
        };
        let reference = self.reference()?;
        let trajs = self.rollouts(&inst, &self.theta, self.n_trajectories, crate::rng::derive_seed(self.seed, 11, 0))?;
        let mut data = trajectory_records(&config, &critic, &self.schedule, &reference, &trajs)?;
        if corrupt {
            data.q.iter_mut().for_each(|q| *q = -*q);
        }
        let policy = AffineMean::new(self.theta[0], vec![self.theta[1]])?;
        let samples = policy_gradient_samples(&policy, &data, n, self.w, config.pathwise_kl)?;
        let fd_seed = crate::rng::derive_seed(self.seed, 12, 0);
        let fd = fd_objective_gradient(&self.theta, self.fd_step, |th| {
            Ok(self.rollouts(&inst, th, self.n_trajectories, fd_seed)?.iter().map(|t| t.returns[0]).collect())
        })?;
        Ok(["k", "l"]
            .iter()
            .enumerate()
            .map(|(j, name)| {
                let col: Vec<f64> = samples.iter().map(|g| g[j]).collect();
                let pg = Estimate::from_samples(&col);
                CoordinateCheck {
                    name: name.to_string(),
                    pg_mean: pg.mean,
                    pg_se: pg.std_error,
                    fd_mean: fd[j].mean,
                    fd_se: fd[j].std_error,
                    z: pg.z_score(&fd[j]),
                }
            })
            .collect())
    }

    /// Both sides of the performance-difference identity between `theta`
    /// (old) and `theta_new`.
    pub fn pdl_check(&self) -> Result<PdlCheck> {
        let inst = self.instance()?;
        let n = self.n_steps;
        let old = LinearPolicy::constant(n, self.theta[0], self.theta[1], self.sigma);
        let new = LinearPolicy::constant(n, self.theta_new[0], self.theta_new[1], self.sigma);
        let v_old = inst.evaluate(&old)?;
        let v_new = inst.evaluate(&new)?;
        let value_gap = v_new.expected(0, 0.0, 1.0) - v_old.expected(0, 0.0, 1.0);
        let trajs = self.rollouts(&inst, &self.theta_new, self.n_pdl_trajectories, crate::rng::derive_seed(self.seed, 13, 0))?;
        let sums: Vec<f64> = trajs
            .iter()
            .map(|tr| {
                (0..n)
                    .map(|i| inst.q_rate(&v_old, i, tr.state(i)[0], tr.action(i)[0]) * tr.dt(i))
                    .sum()
            })
            .collect();
        let est = Estimate::from_samples(&sums);
        Ok(PdlCheck {
            value_gap,
            q_integral: est.mean,
            q_integral_se: est.std_error,
            z: (est.mean - value_gap).abs() / est.std_error,
        })
    }
}
