use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// A (possibly state- and class-dependent) action mean on the reverse clock.
pub trait MeanField: Send + Sync {
    fn dim(&self) -> usize;

    /// Means at per-row reverse times `t`.
    fn mean_batch(&self, t: &[f64], x: ArrayView2<f64>, class: &[usize]) -> Result<Array2<f64>>;

    fn mean(&self, t: f64, x: &[f64], class: usize) -> Result<Vec<f64>> {
        let xv = ArrayView2::from_shape((1, x.len()), x).map_err(|_| Error::ShapeMismatch {
            expected: self.dim(),
            got: x.len(),
        })?;
        Ok(self.mean_batch(&[t], xv, &[class])?.row(0).to_vec())
    }
}

impl<M: MeanField + ?Sized> MeanField for Arc<M> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn mean_batch(&self, t: &[f64], x: ArrayView2<f64>, class: &[usize]) -> Result<Array2<f64>> {
        (**self).mean_batch(t, x, class)
    }
}

impl<M: MeanField + ?Sized> MeanField for &M {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn mean_batch(&self, t: &[f64], x: ArrayView2<f64>, class: &[usize]) -> Result<Array2<f64>> {
        (**self).mean_batch(t, x, class)
    }
}

/// A base mean plus a constant offset.
#[derive(Debug, Clone)]
pub struct ShiftedMean<M> {
    pub base: M,
    pub shift: Vec<f64>,
}

impl<M: MeanField> MeanField for ShiftedMean<M> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn mean_batch(&self, t: &[f64], x: ArrayView2<f64>, class: &[usize]) -> Result<Array2<f64>> {
        let mut m = self.base.mean_batch(t, x, class)?;
        for mut row in m.rows_mut() {
            for (v, s) in row.iter_mut().zip(&self.shift) {
                *v += s;
            }
        }
        Ok(m)
    }
}

/// Gaussian exploratory policy `N(mu(t, x, c), sigma^2 I)` with a constant
/// exploration level.
#[derive(Debug, Clone)]
pub struct GaussianPolicy<M> {
    pub mean: M,
    pub sigma: f64,
}

impl<M: MeanField> GaussianPolicy<M> {
    pub fn new(mean: M, sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "exploration level must be finite and non-negative, got {sigma}"
            )));
        }
        Ok(Self { mean, sigma })
    }

    pub fn sigma_at(&self, _t: f64) -> f64 {
        self.sigma
    }

    pub fn is_deterministic(&self) -> bool {
        self.sigma == 0.0
    }

    pub fn log_density(&self, t: f64, x: &[f64], a: &[f64], class: usize) -> Result<f64> {
        let mu = self.mean.mean(t, x, class)?;
        gaussian_log_density(a, &mu, self.sigma)
    }
}

/// Log-density of `N(mu, sigma^2 I)` at `a`.
pub fn gaussian_log_density(a: &[f64], mu: &[f64], sigma: f64) -> Result<f64> {
    if sigma <= 0.0 {
        return Err(Error::Singular("log-density of a deterministic policy"));
    }
    let d = a.len() as f64;
    let s2 = sigma * sigma;
    let sq: f64 = a.iter().zip(mu).map(|(a, m)| (a - m).powi(2)).sum();
    Ok(-0.5 * sq / s2 - 0.5 * d * (2.0 * PI * s2).ln())
}

/// Draws `a = mu + sigma z`. The log-density is `None` when `sigma = 0`.
pub fn sample_action<M: MeanField, R: Rng + ?Sized>(
    policy: &GaussianPolicy<M>,
    t: f64,
    x: &[f64],
    class: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, Option<f64>)> {
    let mu = policy.mean.mean(t, x, class)?;
    let sigma = policy.sigma_at(t);
    if sigma == 0.0 {
        return Ok((mu, None));
    }
    let a: Vec<f64> = mu
        .iter()
        .map(|m| m + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let logp = gaussian_log_density(&a, &mu, sigma)?;
    Ok((a, Some(logp)))
}

/// `pi_new(a | t, x, c) / pi_old(a | t, x, c)`.
pub fn likelihood_ratio<M: MeanField, N: MeanField>(
    new: &GaussianPolicy<M>,
    old: &GaussianPolicy<N>,
    t: f64,
    x: &[f64],
    a: &[f64],
    class: usize,
) -> Result<f64> {
    let lo = old.log_density(t, x, a, class)?;
    if lo == f64::NEG_INFINITY {
        return Err(Error::Singular("zero density under the old policy"));
    }
    let ln = new.log_density(t, x, a, class)?;
    Ok((ln - lo).exp())
}

/// KL between the two Gaussian action distributions at `(t, x, c)`; the
/// exploration levels must agree.
pub fn policy_kl<M: MeanField, N: MeanField>(
    new: &GaussianPolicy<M>,
    old: &GaussianPolicy<N>,
    t: f64,
    x: &[f64],
    class: usize,
) -> Result<f64> {
    let sigma = new.sigma_at(t);
    if sigma == 0.0 {
        return Err(Error::Singular("KL with zero exploration"));
    }
    if old.sigma_at(t) != sigma {
        return Err(Error::InvalidParameter(
            "policy_kl requires a shared exploration level".into(),
        ));
    }
    let mn = new.mean.mean(t, x, class)?;
    let mo = old.mean.mean(t, x, class)?;
    let sq: f64 = mn.iter().zip(&mo).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(sq / (2.0 * sigma * sigma))
}
