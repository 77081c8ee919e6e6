use ndarray::Array2;

use crate::error::{ensure, Error, Result};
use crate::score::MeanField;
use crate::sde::{NoiseSchedule, Trajectory};
use crate::stats::Estimate;

/// KL weight and the frozen reference mean.
#[derive(Clone, Copy)]
pub struct RunningRewardParams<'a> {
    pub beta: f64,
    pub reference: &'a dyn MeanField,
}

impl<'a> RunningRewardParams<'a> {
    pub fn new(beta: f64, reference: &'a dyn MeanField) -> Result<Self> {
        ensure(beta >= 0.0 && beta.is_finite(), || format!("KL weight must be non-negative, got {beta}"))?;
        Ok(Self { beta, reference })
    }
}

/// `-(beta / 2) g^2(T - t) |mu(t, x, c) - mu_ref(t, x, c)|^2`.
pub fn running_reward(
    params: &RunningRewardParams,
    schedule: &NoiseSchedule,
    t: f64,
    x: &[f64],
    class: usize,
    policy_mean: &dyn MeanField,
) -> Result<f64> {
    schedule.check_time(t)?;
    let mu = policy_mean.mean(t, x, class)?;
    let mr = params.reference.mean(t, x, class)?;
    let sq: f64 = mu.iter().zip(&mr).map(|(a, b)| (a - b).powi(2)).sum();
    if sq == 0.0 {
        return Ok(0.0);
    }
    Ok(-0.5 * params.beta * schedule.g2_reverse(t) * sq)
}

/// Per-trajectory Girsanov integrals `sum_i g^2(T - t_i) / 2 |mu - mu_ref|^2 dt_i`
/// (left-endpoint rule on each trajectory's grid), without the KL weight.
pub fn kl_path_samples(
    schedule: &NoiseSchedule,
    trajectories: &[Trajectory],
    policy_mean: &dyn MeanField,
    reference: &dyn MeanField,
) -> Result<Vec<f64>> {
    if trajectories.is_empty() {
        return Err(Error::Empty("trajectory set"));
    }
    let n = trajectories[0].n_steps();
    let d = trajectories[0].dim;
    ensure(
        trajectories.iter().all(|t| t.n_steps() == n && t.dim == d),
        || "trajectories must share a grid".into(),
    )?;
    let b = trajectories.len();
    let classes: Vec<usize> = trajectories.iter().map(|t| t.class).collect();
    let mut out = vec![0.0; b];
    let mut x = Array2::zeros((b, d));
    for i in 0..n {
        let t: Vec<f64> = trajectories.iter().map(|tr| tr.times[i]).collect();
        for (k, tr) in trajectories.iter().enumerate() {
            x.row_mut(k).assign(&ndarray::ArrayView1::from(tr.state(i)));
        }
        let mu = policy_mean.mean_batch(&t, x.view(), &classes)?;
        let mr = reference.mean_batch(&t, x.view(), &classes)?;
        for (k, tr) in trajectories.iter().enumerate() {
            let sq: f64 = (0..d).map(|j| (mu[[k, j]] - mr[[k, j]]).powi(2)).sum();
            out[k] += 0.5 * schedule.g2_reverse(t[k]) * sq * tr.dt(i);
        }
    }
    Ok(out)
}

/// Monte Carlo estimate of the path KL between the policy and the reference.
pub fn kl_path_estimate(
    schedule: &NoiseSchedule,
    trajectories: &[Trajectory],
    policy_mean: &dyn MeanField,
    reference: &dyn MeanField,
) -> Result<Estimate> {
    let s = kl_path_samples(schedule, trajectories, policy_mean, reference)?;
    if s.len() == 1 {
        return Ok(Estimate {
            mean: s[0],
            std_error: f64::INFINITY,
        });
    }
    Ok(Estimate::from_samples(&s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::ShiftedMean;
    use ndarray::ArrayView2;

    struct Zero(usize);
    impl MeanField for Zero {
        fn dim(&self) -> usize {
            self.0
        }
        fn mean_batch(&self, _t: &[f64], x: ArrayView2<f64>, _c: &[usize]) -> Result<Array2<f64>> {
            Ok(Array2::zeros(x.raw_dim()))
        }
    }

    #[test]
    fn reward_values() {
        let sch = NoiseSchedule::constant(1.0, 1.0).unwrap();
        let base = Zero(2);
        let p = RunningRewardParams::new(0.1, &base).unwrap();
        assert_eq!(running_reward(&p, &sch, 0.3, &[1.0, 2.0], 0, &base).unwrap(), 0.0);
        let shifted = ShiftedMean {
            base: Zero(2),
            shift: vec![2.0, 0.0],
        };
        let r = running_reward(&p, &sch, 0.3, &[1.0, 2.0], 0, &shifted).unwrap();
        assert!((r + 0.2).abs() < 1e-15);
        let p2 = RunningRewardParams::new(0.2, &base).unwrap();
        let r2 = running_reward(&p2, &sch, 0.3, &[1.0, 2.0], 0, &shifted).unwrap();
        assert!((r2 - 2.0 * r).abs() < 1e-15);
    }
}
