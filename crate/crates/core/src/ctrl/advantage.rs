use ndarray::{Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::ctrl::{AdvantageDirection, CtrlConfig};
use crate::error::{Error, Result};
use crate::rng;
use crate::score::MeanField;
use crate::sde::{NoiseSchedule, Trajectory};
use crate::value::{advantage_rate, Critic};

/// One policy-optimization record.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageRecord {
    pub t: f64,
    pub x: Vec<f64>,
    pub class: usize,
    pub action: Vec<f64>,
    pub q: f64,
    pub logp_old: f64,
    /// Quadrature weight `dt / (N M)`.
    pub weight: f64,
}

/// Records stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageDataset {
    pub sigma: f64,
    pub t: Vec<f64>,
    pub x: Array2<f64>,
    pub class: Vec<usize>,
    pub action: Array2<f64>,
    /// Reference mean at `(t, x, c)`.
    pub mu_ref: Array2<f64>,
    /// `g^2(T - t)`.
    pub g2: Vec<f64>,
    pub q: Vec<f64>,
    pub logp_old: Vec<f64>,
    pub weight: Vec<f64>,
}

impl AdvantageDataset {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn record(&self, i: usize) -> AdvantageRecord {
        AdvantageRecord {
            t: self.t[i],
            x: self.x.row(i).to_vec(),
            class: self.class[i],
            action: self.action.row(i).to_vec(),
            q: self.q[i],
            logp_old: self.logp_old[i],
            weight: self.weight[i],
        }
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<f64>>();
        Self {
            sigma: self.sigma,
            t: pick(&self.t),
            x: self.x.select(Axis(0), idx),
            class: idx.iter().map(|&i| self.class[i]).collect(),
            action: self.action.select(Axis(0), idx),
            mu_ref: self.mu_ref.select(Axis(0), idx),
            g2: pick(&self.g2),
            q: pick(&self.q),
            logp_old: pick(&self.logp_old),
            weight: pick(&self.weight),
        }
    }

    /// Sum of `weight * q`: the surrogate at the old policy without the KL term.
    pub fn weighted_advantage(&self) -> f64 {
        self.weight.iter().zip(&self.q).map(|(w, q)| w * q).sum()
    }

    fn whiten(&mut self) {
        let m = crate::stats::mean(&self.q);
        let s = crate::stats::std_dev(&self.q);
        if s > 0.0 {
            for q in &mut self.q {
                *q = (*q - m) / s;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.q.iter().chain(&self.logp_old).all(|v| v.is_finite())
    }
}

struct Pending {
    t: Vec<f64>,
    x: Vec<f64>,
    class: Vec<usize>,
    mean: Vec<f64>,
    action: Vec<f64>,
    weight: Vec<f64>,
}

fn assemble<C: Critic + ?Sized>(
    p: Pending,
    dim: usize,
    sigma: f64,
    direction: AdvantageDirection,
    eta: f64,
    critic: &C,
    schedule: &NoiseSchedule,
    reference: &dyn MeanField,
) -> Result<AdvantageDataset> {
    let r = p.t.len();
    if r == 0 {
        return Err(Error::Empty("advantage dataset"));
    }
    let x = Array2::from_shape_vec((r, dim), p.x).expect("row-major states");
    let action = Array2::from_shape_vec((r, dim), p.action).expect("row-major actions");
    let mean = Array2::from_shape_vec((r, dim), p.mean).expect("row-major means");
    let dir = match direction {
        AdvantageDirection::Centered => &action - &mean,
        AdvantageDirection::RawAction => action.clone(),
    };
    let q = advantage_rate(critic, schedule, &p.t, x.view(), &p.class, dir.view(), eta)?;
    let mu_ref = reference.mean_batch(&p.t, x.view(), &p.class)?;
    let log_norm = -0.5 * dim as f64 * (2.0 * std::f64::consts::PI * sigma * sigma).ln();
    let logp_old = (0..r)
        .map(|i| {
            let sq: f64 = (&action.row(i) - &mean.row(i)).mapv(|v| v * v).sum();
            log_norm - 0.5 * sq / (sigma * sigma)
        })
        .collect();
    let g2 = p.t.iter().map(|&t| schedule.g2_reverse(t)).collect();
    let ds = AdvantageDataset {
        sigma,
        t: p.t,
        x,
        class: p.class,
        action,
        mu_ref,
        g2,
        q,
        logp_old,
        weight: p.weight,
    };
    if !ds.all_finite() {
        return Err(Error::NonFinite { step: 0, what: "advantage" });
    }
    Ok(ds)
}

fn check_trajectories(trajs: &[Trajectory]) -> Result<usize> {
    let first = trajs.first().ok_or(Error::Empty("trajectory set"))?;
    if trajs.iter().any(|t| t.dim != first.dim) {
        return Err(Error::InvalidParameter("trajectories must share a dimension".into()));
    }
    Ok(first.dim)
}

/// `M` pseudo actions `a = mu_old + sigma eps_j` at every visited state, with
/// advantage rates `(V(t, x + eta g^2 d) - V(t, x)) / eta` along the configured
/// direction `d`.
pub fn build_advantage_dataset<C: Critic + ?Sized>(
    config: &CtrlConfig,
    critic: &C,
    schedule: &NoiseSchedule,
    reference: &dyn MeanField,
    trajectories: &[Trajectory],
    seed: u64,
) -> Result<AdvantageDataset> {
    let d = check_trajectories(trajectories)?;
    let m = config.n_pseudo;
    let w = 1.0 / (trajectories.len() * m) as f64;
    let mut p = Pending {
        t: vec![],
        x: vec![],
        class: vec![],
        mean: vec![],
        action: vec![],
        weight: vec![],
    };
    for (k, tr) in trajectories.iter().enumerate() {
        let mut r = rng::stream(seed, k as u64);
        for i in 0..tr.n_steps() {
            let mu = tr.mean(i);
            for _ in 0..m {
                p.t.push(tr.times[i]);
                p.x.extend_from_slice(tr.state(i));
                p.class.push(tr.class);
                p.mean.extend_from_slice(mu);
                for &mj in mu {
                    let e: f64 = r.sample(StandardNormal);
                    p.action.push(mj + config.sigma * e);
                }
                p.weight.push(tr.dt(i) * w);
            }
        }
    }
    let mut ds = assemble(
        p,
        d,
        config.sigma,
        config.advantage_direction,
        config.eta,
        critic,
        schedule,
        reference,
    )?;
    if config.whiten_advantages {
        ds.whiten();
    }
    Ok(ds)
}

/// Records for the actions actually taken along the trajectories (one per
/// step, weight `dt / N`).
pub fn trajectory_records<C: Critic + ?Sized>(
    config: &CtrlConfig,
    critic: &C,
    schedule: &NoiseSchedule,
    reference: &dyn MeanField,
    trajectories: &[Trajectory],
) -> Result<AdvantageDataset> {
    let d = check_trajectories(trajectories)?;
    if trajectories.iter().any(|t| t.is_deterministic()) {
        return Err(Error::InvalidParameter("trajectory records need exploratory rollouts".into()));
    }
    let w = 1.0 / trajectories.len() as f64;
    let mut p = Pending {
        t: vec![],
        x: vec![],
        class: vec![],
        mean: vec![],
        action: vec![],
        weight: vec![],
    };
    for tr in trajectories {
        for i in 0..tr.n_steps() {
            p.t.push(tr.times[i]);
            p.x.extend_from_slice(tr.state(i));
            p.class.push(tr.class);
            p.mean.extend_from_slice(tr.mean(i));
            p.action.extend_from_slice(tr.action(i));
            p.weight.push(tr.dt(i) * w);
        }
    }
    assemble(
        p,
        d,
        config.sigma,
        config.advantage_direction,
        config.eta,
        critic,
        schedule,
        reference,
    )
}
