use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::oracle::{gaussian_terminal_kl, AnalyticScore, GaussianMixtureData};
use crate::score::{GaussianPolicy, MeanField, ShiftedMean};
use crate::sde::{rollout_batch, NoiseSchedule, RolloutSpec, TimeGrid};
use crate::stats::Estimate;
use crate::value::kl_path_estimate;

/// Exact Gaussian score against the same score plus a constant `delta`, on a
/// constant-rate schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GirsanovSetup {
    pub gamma: f64,
    pub horizon: f64,
    pub mean: Vec<f64>,
    pub variance: f64,
    pub delta: Vec<f64>,
    pub n_trajectories: usize,
    pub n_steps: usize,
    pub seed: u64,
}

impl Default for GirsanovSetup {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            horizon: 1.0,
            mean: vec![0.5, -0.3],
            variance: 0.5,
            delta: vec![0.4, -0.2],
            n_trajectories: 1000,
            n_steps: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GirsanovReport {
    /// `T gamma |delta|^2 / 2`.
    pub closed_form: f64,
    pub path_kl: f64,
    pub path_kl_se: f64,
    pub rel_error: f64,
    /// Monte Carlo mean of the log density ratio of the discretized paths.
    pub log_ratio: f64,
    pub log_ratio_se: f64,
    /// KL between the two terminal marginals.
    pub terminal_kl: f64,
}

impl GirsanovReport {
    pub fn passed(&self) -> bool {
        self.rel_error <= 0.02 && self.terminal_kl <= self.path_kl
    }
}

impl GirsanovSetup {
    pub fn run(&self) -> Result<GirsanovReport> {
        let schedule = NoiseSchedule::constant(self.gamma, self.horizon)?;
        let data = GaussianMixtureData::gaussian(self.mean.clone(), self.variance)?;
        let reference = AnalyticScore::new(data, schedule);
        let shifted = ShiftedMean {
            base: reference.clone(),
            shift: self.delta.clone(),
        };
        let grid = TimeGrid::uniform(self.n_steps, self.horizon)?;
        let spec = RolloutSpec::new(schedule, grid, self.seed);
        let policy = GaussianPolicy::new(&shifted, 0.0)?;
        let trajs = rollout_batch(&spec, &policy, &vec![0; self.n_trajectories])?;
        let kl = kl_path_estimate(&schedule, &trajs, &shifted, &reference)?;

        let mut ratios = Vec::with_capacity(trajs.len());
        for tr in &trajs {
            let mut total = 0.0;
            for i in 0..tr.n_steps() {
                let (t, dt) = (tr.times[i], tr.dt(i));
                let g2 = schedule.g2_reverse(t);
                let x = tr.state(i);
                let next = tr.state(i + 1);
                let mr = reference.mean(t, x, 0)?;
                let mp = tr.mean(i);
                let mut sq = 0.0;
                for j in 0..x.len() {
                    let drift = |a: f64| x[j] + (0.5 * g2 * x[j] + g2 * a) * dt;
                    sq += (next[j] - drift(mr[j])).powi(2) - (next[j] - drift(mp[j])).powi(2);
                }
                total += sq / (2.0 * g2 * dt);
            }
            ratios.push(total);
        }
        let lr = Estimate::from_samples(&ratios);

        let sq: f64 = self.delta.iter().map(|d| d * d).sum();
        let closed_form = self.horizon * self.gamma * sq / 2.0;
        let exact = gaussian_terminal_kl(&schedule, &self.mean, self.variance, &self.delta);
        Ok(GirsanovReport {
            closed_form,
            path_kl: kl.mean,
            path_kl_se: kl.std_error,
            rel_error: (kl.mean - closed_form).abs() / closed_form,
            log_ratio: lr.mean,
            log_ratio_se: lr.std_error,
            terminal_kl: exact.terminal_kl,
        })
    }
}
