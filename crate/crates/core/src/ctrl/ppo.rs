use ndarray::Array2;
use rand::seq::SliceRandom;

use crate::ctrl::{AdvantageDataset, TrainableMean};
use crate::error::{Error, Result};
use crate::nn::{Optimizer, ParamVector};
use crate::rng;

/// `min(rho q, clip(rho, 1 - eps, 1 + eps) q)` and its derivative in `rho`.
/// Ties go to the unclipped branch, so the derivative at `rho = 1` is `q`.
pub fn clipped_objective(ratio: f64, adv: f64, eps: f64) -> (f64, f64) {
    let unclipped = ratio * adv;
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * adv;
    if unclipped <= clipped {
        (unclipped, adv)
    } else {
        (clipped, 0.0)
    }
}

/// Settings of the clipped surrogate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateSpec {
    pub clip: f64,
    pub beta: f64,
    pub pathwise_kl: bool,
}

/// Value of the clipped surrogate on `data` scaled by `scale`, and optionally
/// its parameter gradient.
///
/// `L = sum_r w_r min(rho_r q_r, clip(rho_r) q_r) - (beta / 2) sum_r w_r g_r^2 |mu - mu_ref|^2`,
/// the second term only with `pathwise_kl`.
pub fn surrogate<P: TrainableMean>(
    spec: &SurrogateSpec,
    policy: &P,
    data: &AdvantageDataset,
    scale: f64,
    grad: Option<&mut [f64]>,
) -> Result<f64> {
    let mu = policy.mean_batch(&data.t, data.x.view(), &data.class)?;
    let (r, d) = mu.dim();
    let s2 = data.sigma * data.sigma;
    let log_norm = -0.5 * d as f64 * (2.0 * std::f64::consts::PI * s2).ln();
    let mut cot = Array2::zeros((r, d));
    let mut total = 0.0;
    for i in 0..r {
        let w = scale * data.weight[i];
        let diff: Vec<f64> = (0..d).map(|j| data.action[[i, j]] - mu[[i, j]]).collect();
        let logp = log_norm - 0.5 * diff.iter().map(|v| v * v).sum::<f64>() / s2;
        let ratio = (logp - data.logp_old[i]).exp();
        let (o, dr) = clipped_objective(ratio, data.q[i], spec.clip);
        total += w * o;
        for j in 0..d {
            cot[[i, j]] = w * dr * ratio * diff[j] / s2;
        }
        if spec.pathwise_kl && spec.beta > 0.0 {
            let c = spec.beta * data.g2[i];
            let mut sq = 0.0;
            for j in 0..d {
                let e = mu[[i, j]] - data.mu_ref[[i, j]];
                sq += e * e;
                cot[[i, j]] -= w * c * e;
            }
            total -= w * 0.5 * c * sq;
        }
    }
    if let Some(g) = grad {
        policy.mean_param_vjp(&data.t, data.x.view(), &data.class, cot.view(), g)?;
    }
    Ok(total)
}

/// `sum_r w_r grad log pi(a_r) q_r`, plus the gradient of the running reward at
/// the policy mean when `pathwise_kl` is set.
pub fn policy_gradient_estimate<P: TrainableMean>(
    policy: &P,
    data: &AdvantageDataset,
    beta: f64,
    pathwise_kl: bool,
) -> Result<Vec<f64>> {
    let mu = policy.mean_batch(&data.t, data.x.view(), &data.class)?;
    let s2 = data.sigma * data.sigma;
    let mut cot = Array2::zeros(mu.raw_dim());
    for i in 0..mu.nrows() {
        for j in 0..mu.ncols() {
            let score = (data.action[[i, j]] - mu[[i, j]]) / s2;
            let mut c = data.weight[i] * data.q[i] * score;
            if pathwise_kl {
                c -= data.weight[i] * beta * data.g2[i] * (mu[[i, j]] - data.mu_ref[[i, j]]);
            }
            cot[[i, j]] = c;
        }
    }
    let mut g = vec![0.0; policy.n_params()];
    policy.mean_param_vjp(&data.t, data.x.view(), &data.class, cot.view(), &mut g)?;
    Ok(g)
}

/// Per-group estimates of [`policy_gradient_estimate`], for groups of
/// `group_len` consecutive records (one group per trajectory), each rescaled
/// by the group count.
pub fn policy_gradient_samples<P: TrainableMean>(
    policy: &P,
    data: &AdvantageDataset,
    group_len: usize,
    beta: f64,
    pathwise_kl: bool,
) -> Result<Vec<Vec<f64>>> {
    if group_len == 0 || !data.len().is_multiple_of(group_len) {
        return Err(Error::InvalidParameter("records do not split into equal groups".into()));
    }
    let groups = data.len() / group_len;
    (0..groups)
        .map(|k| {
            let idx: Vec<usize> = (k * group_len..(k + 1) * group_len).collect();
            let mut g = policy_gradient_estimate(policy, &data.subset(&idx), beta, pathwise_kl)?;
            for v in &mut g {
                *v *= groups as f64;
            }
            Ok(g)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpoReport {
    /// Full-data surrogate at the old parameters.
    pub surrogate_before: f64,
    pub surrogate_after: f64,
    /// Records outside the clip range after the update.
    pub clip_fraction: f64,
    pub steps: usize,
}

fn clip_fraction<P: TrainableMean>(policy: &P, data: &AdvantageDataset, eps: f64) -> Result<f64> {
    let mu = policy.mean_batch(&data.t, data.x.view(), &data.class)?;
    let s2 = data.sigma * data.sigma;
    let mut n = 0usize;
    for i in 0..data.len() {
        let mut dl = 0.0;
        for j in 0..data.dim() {
            dl -= 0.5 * (data.action[[i, j]] - mu[[i, j]]).powi(2) / s2;
        }
        let d = data.dim() as f64;
        let logp = dl - 0.5 * d * (2.0 * std::f64::consts::PI * s2).ln();
        let ratio = (logp - data.logp_old[i]).exp();
        if (ratio - 1.0).abs() > eps {
            n += 1;
        }
    }
    Ok(n as f64 / data.len() as f64)
}

/// `epochs` passes of minibatch ascent on the clipped surrogate, shuffling
/// records each pass. Each minibatch estimates the full sum by rescaling with
/// `|D| / |B|`.
pub fn ppo_update<P: TrainableMean>(
    spec: &SurrogateSpec,
    epochs: usize,
    batch_size: usize,
    policy: &mut P,
    data: &AdvantageDataset,
    optimizer: &mut Optimizer,
    seed: u64,
) -> Result<PpoReport> {
    if data.is_empty() {
        return Err(Error::Empty("advantage dataset"));
    }
    let before = surrogate(spec, policy, data, 1.0, None)?;
    let start = policy.param_values().to_vec();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut shuffle = rng::stream(seed, 0);
    let mut steps = 0;
    let b = batch_size.max(1);
    for epoch in 0..epochs {
        order.shuffle(&mut shuffle);
        for chunk in order.chunks(b) {
            let batch = data.subset(chunk);
            let scale = data.len() as f64 / chunk.len() as f64;
            let mut g = vec![0.0; policy.n_params()];
            let v = surrogate(spec, policy, &batch, scale, Some(&mut g))?;
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
    let after = surrogate(spec, policy, data, 1.0, None)?;
    if !after.is_finite() {
        return Err(Error::Diverged {
            iteration: epochs,
            last_good: Some(Box::new(ParamVector::flat(start))),
        });
    }
    Ok(PpoReport {
        surrogate_before: before,
        surrogate_after: after,
        clip_fraction: clip_fraction(policy, data, spec.clip)?,
        steps,
    })
}
