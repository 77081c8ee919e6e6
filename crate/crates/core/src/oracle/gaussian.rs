use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::score::{MeanField, ScoreModel};
use crate::sde::NoiseSchedule;

/// Mixture of isotropic Gaussians `sum_k w_k N(m_k, s^2 I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianMixtureData {
    pub means: Vec<Vec<f64>>,
    pub variance: f64,
    pub weights: Vec<f64>,
}

impl GaussianMixtureData {
    pub fn new(means: Vec<Vec<f64>>, variance: f64, weights: Vec<f64>) -> Result<Self> {
        let m = Self { means, variance, weights };
        m.validate()?;
        Ok(m)
    }

    /// Single component `N(mean, s^2 I)`.
    pub fn gaussian(mean: Vec<f64>, variance: f64) -> Result<Self> {
        Self::new(vec![mean], variance, vec![1.0])
    }

    /// Equal-weight pair at `+-(offset, 0, ...)`.
    pub fn symmetric_pair(dim: usize, offset: f64, variance: f64) -> Result<Self> {
        let mut a = vec![0.0; dim];
        a[0] = offset;
        let b = a.iter().map(|v| -v).collect();
        Self::new(vec![a, b], variance, vec![0.5, 0.5])
    }

    pub fn validate(&self) -> Result<()> {
        ensure(!self.means.is_empty(), || "mixture needs at least one component".into())?;
        ensure(self.means.len() == self.weights.len(), || "one weight per component".into())?;
        let d = self.means[0].len();
        ensure(d > 0 && self.means.iter().all(|m| m.len() == d), || {
            "component means must share a positive dimension".into()
        })?;
        ensure(self.variance > 0.0 && self.variance.is_finite(), || {
            format!("component variance must be positive, got {}", self.variance)
        })?;
        ensure(self.weights.iter().all(|&w| w >= 0.0), || "weights must be non-negative".into())?;
        let total: f64 = self.weights.iter().sum();
        ensure((total - 1.0).abs() < 1e-9, || format!("weights sum to {total}, not 1"))
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn n_components(&self) -> usize {
        self.means.len()
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (m, w) in self.means.iter().zip(&self.weights) {
            for (o, v) in out.iter_mut().zip(m) {
                *o += w * v;
            }
        }
        out
    }

    /// Draws `n` points and their component labels.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> (Array2<f64>, Vec<usize>) {
        let d = self.dim();
        let s = self.variance.sqrt();
        let mut x = Array2::zeros((n, d));
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut k = self.n_components() - 1;
            for (j, w) in self.weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    k = j;
                    break;
                }
            }
            labels.push(k);
            for j in 0..d {
                let z: f64 = rng.sample(StandardNormal);
                x[[i, j]] = self.means[k][j] + s * z;
            }
        }
        (x, labels)
    }

    /// Marginal variance `alpha^2 s^2 + sigma^2` of each component at forward time `t`.
    pub fn marginal_variance(&self, schedule: &NoiseSchedule, t: f64) -> f64 {
        let a = schedule.alpha(t);
        a * a * self.variance + schedule.sigma2(t)
    }

    fn component_log_density(&self, schedule: &NoiseSchedule, t: f64, k: usize, x: &[f64]) -> f64 {
        let a = schedule.alpha(t);
        let v = self.marginal_variance(schedule, t);
        let sq: f64 = x.iter().zip(&self.means[k]).map(|(x, m)| (x - a * m).powi(2)).sum();
        -0.5 * sq / v - 0.5 * x.len() as f64 * (2.0 * std::f64::consts::PI * v).ln()
    }

    /// Component posterior probabilities given `x_t = x`.
    pub fn responsibilities(&self, schedule: &NoiseSchedule, t: f64, x: &[f64]) -> Vec<f64> {
        let logs: Vec<f64> = (0..self.n_components())
            .map(|k| {
                if self.weights[k] > 0.0 {
                    self.weights[k].ln() + self.component_log_density(schedule, t, k, x)
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|v| v / z).collect()
    }

    /// `log p_t(x)` of the perturbed mixture at forward time `t`.
    pub fn log_density(&self, schedule: &NoiseSchedule, t: f64, x: &[f64]) -> f64 {
        let logs: Vec<f64> = (0..self.n_components())
            .filter(|&k| self.weights[k] > 0.0)
            .map(|k| self.weights[k].ln() + self.component_log_density(schedule, t, k, x))
            .collect();
        let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        top + logs.iter().map(|l| (l - top).exp()).sum::<f64>().ln()
    }

    /// `grad_x log p_t(x)` at forward time `t`.
    pub fn score(&self, schedule: &NoiseSchedule, t: f64, x: &[f64]) -> Vec<f64> {
        let a = schedule.alpha(t);
        let v = self.marginal_variance(schedule, t);
        let r = self.responsibilities(schedule, t, x);
        let mut out = vec![0.0; x.len()];
        for (k, rk) in r.iter().enumerate() {
            for j in 0..x.len() {
                out[j] -= rk * (x[j] - a * self.means[k][j]) / v;
            }
        }
        out
    }

    /// Score of component `k` alone.
    pub fn component_score(&self, schedule: &NoiseSchedule, t: f64, k: usize, x: &[f64]) -> Vec<f64> {
        let a = schedule.alpha(t);
        let v = self.marginal_variance(schedule, t);
        x.iter().zip(&self.means[k]).map(|(x, m)| -(x - a * m) / v).collect()
    }

    /// Posterior mean `E[x_0 | x_t = x]` at forward time `t`.
    pub fn posterior_mean(&self, schedule: &NoiseSchedule, t: f64, x: &[f64]) -> Vec<f64> {
        let a = schedule.alpha(t);
        let v = self.marginal_variance(schedule, t);
        let gain = a * self.variance / v;
        let r = self.responsibilities(schedule, t, x);
        let mut out = vec![0.0; x.len()];
        for (k, rk) in r.iter().enumerate() {
            for j in 0..x.len() {
                let m = self.means[k][j];
                out[j] += rk * (m + gain * (x[j] - a * m));
            }
        }
        out
    }

    /// Irreducible part of the `sigma^2`-weighted denoising loss at forward
    /// time `t` for a single-component mixture: `d alpha^2 s^2 / v`.
    pub fn dsm_irreducible(&self, schedule: &NoiseSchedule, t: f64) -> Result<f64> {
        if self.n_components() != 1 {
            return Err(Error::InvalidParameter("irreducible loss needs a single component".into()));
        }
        let a = schedule.alpha(t);
        Ok(self.dim() as f64 * a * a * self.variance / self.marginal_variance(schedule, t))
    }
}

/// The exact mixture score read on the reverse clock. With `conditional`
/// set, class `c` selects component `c`.
#[derive(Debug, Clone)]
pub struct AnalyticScore {
    pub data: GaussianMixtureData,
    pub schedule: NoiseSchedule,
    pub conditional: bool,
}

impl AnalyticScore {
    pub fn new(data: GaussianMixtureData, schedule: NoiseSchedule) -> Self {
        Self {
            data,
            schedule,
            conditional: false,
        }
    }

    pub fn conditional(mut self) -> Self {
        self.conditional = true;
        self
    }
}

impl MeanField for AnalyticScore {
    fn dim(&self) -> usize {
        self.data.dim()
    }

    fn mean_batch(&self, t: &[f64], x: ArrayView2<f64>, class: &[usize]) -> Result<Array2<f64>> {
        if t.len() != x.nrows() {
            return Err(Error::ShapeMismatch {
                expected: x.nrows(),
                got: t.len(),
            });
        }
        let mut out = Array2::zeros(x.raw_dim());
        for i in 0..x.nrows() {
            let tf = self.schedule.forward_time(t[i]);
            let row: Vec<f64> = x.row(i).to_vec();
            let s = self.score_at(tf, &row, class.get(i).copied().unwrap_or(0))?;
            for (j, v) in s.into_iter().enumerate() {
                out[[i, j]] = v;
            }
        }
        Ok(out)
    }
}

impl ScoreModel for AnalyticScore {
    fn dim(&self) -> usize {
        self.data.dim()
    }

    fn score_batch(&self, t_forward: &[f64], x: ArrayView2<f64>, class: &[usize]) -> Result<Array2<f64>> {
        let mut out = Array2::zeros(x.raw_dim());
        for i in 0..x.nrows() {
            let row: Vec<f64> = x.row(i).to_vec();
            let s = self.score_at(t_forward[i], &row, class.get(i).copied().unwrap_or(0))?;
            for (j, v) in s.into_iter().enumerate() {
                out[[i, j]] = v;
            }
        }
        Ok(out)
    }

    fn score_input_vjp(
        &self,
        t_forward: &[f64],
        x: ArrayView2<f64>,
        _class: &[usize],
        cotangent: ArrayView2<f64>,
    ) -> Result<Array2<f64>> {
        // J = -I / v + sum_k r_k u_k u_k^T - s s^T with u_k the component scores
        let mut out = Array2::zeros(x.raw_dim());
        for i in 0..x.nrows() {
            let t = t_forward[i];
            let row: Vec<f64> = x.row(i).to_vec();
            let cot: Vec<f64> = cotangent.row(i).to_vec();
            let v = self.data.marginal_variance(&self.schedule, t);
            let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(a, b)| a * b).sum::<f64>();
            let mut g: Vec<f64> = cot.iter().map(|c| -c / v).collect();
            if !self.conditional {
                let r = self.data.responsibilities(&self.schedule, t, &row);
                let s = self.data.score(&self.schedule, t, &row);
                for (k, rk) in r.iter().enumerate() {
                    let u = self.data.component_score(&self.schedule, t, k, &row);
                    let cu = dot(&cot, &u);
                    for j in 0..g.len() {
                        g[j] += rk * cu * u[j];
                    }
                }
                let cs = dot(&cot, &s);
                for j in 0..g.len() {
                    g[j] -= cs * s[j];
                }
            }
            for (j, val) in g.into_iter().enumerate() {
                out[[i, j]] = val;
            }
        }
        Ok(out)
    }
}

impl AnalyticScore {
    fn score_at(&self, t_forward: f64, x: &[f64], class: usize) -> Result<Vec<f64>> {
        if self.conditional {
            if class >= self.data.n_components() {
                return Err(Error::InvalidParameter(format!("class {class} has no component")));
            }
            Ok(self.data.component_score(&self.schedule, t_forward, class, x))
        } else {
            Ok(self.data.score(&self.schedule, t_forward, x))
        }
    }
}

/// Exact probability-flow solution for data `N(m, s^2 I)`: maps `x` at forward
/// time `from` to forward time `to`.
pub fn pf_ode_exact(schedule: &NoiseSchedule, m: &[f64], s2: f64, x: &[f64], from: f64, to: f64) -> Vec<f64> {
    let v = |t: f64| {
        let a = schedule.alpha(t);
        a * a * s2 + schedule.sigma2(t)
    };
    let ratio = (v(to) / v(from)).sqrt();
    let (af, at) = (schedule.alpha(from), schedule.alpha(to));
    x.iter().zip(m).map(|(x, m)| at * m + ratio * (x - af * m)).collect()
}

fn rk4<F: Fn(f64, [f64; 2]) -> [f64; 2]>(f: F, y0: [f64; 2], t0: f64, t1: f64, steps: usize) -> [f64; 2] {
    let h = (t1 - t0) / steps as f64;
    let mut y = y0;
    let add = |y: [f64; 2], k: [f64; 2], s: f64| [y[0] + s * k[0], y[1] + s * k[1]];
    for i in 0..steps {
        let t = t0 + i as f64 * h;
        let k1 = f(t, y);
        let k2 = f(t + 0.5 * h, add(y, k1, 0.5 * h));
        let k3 = f(t + 0.5 * h, add(y, k2, 0.5 * h));
        let k4 = f(t + h, add(y, k3, h));
        for j in 0..2 {
            y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
    }
    y
}

/// Per-coordinate mean and variance at reverse time `t_end` of the reverse
/// SDE driven by the exact score of `N(m, s^2)` plus a constant `shift`,
/// started from `N(x0_mean, x0_var)` at reverse time 0. Integrated by RK4.
pub fn reverse_moments(
    schedule: &NoiseSchedule,
    m: f64,
    s2: f64,
    shift: f64,
    (x0_mean, x0_var): (f64, f64),
    t_end: f64,
    steps: usize,
) -> (f64, f64) {
    let horizon = schedule.horizon;
    let f = |t: f64, y: [f64; 2]| {
        let tf = (horizon - t).max(0.0);
        let beta = schedule.beta(tf);
        let a = schedule.alpha(tf);
        let v = a * a * s2 + schedule.sigma2(tf);
        let slope = 0.5 * beta - beta / v;
        let offset = beta * (a * m / v + shift);
        [slope * y[0] + offset, 2.0 * slope * y[1] + beta]
    };
    let y = rk4(f, [x0_mean, x0_var], 0.0, t_end, steps);
    (y[0], y[1])
}

/// Girsanov path KL and the exact terminal-marginal KL for the policy pair
/// (exact score of `N(m, s^2 I)`, same plus constant `delta`) started from the
/// standard normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianKl {
    pub path_kl: f64,
    pub terminal_kl: f64,
}

pub fn gaussian_terminal_kl(schedule: &NoiseSchedule, m: &[f64], s2: f64, delta: &[f64]) -> GaussianKl {
    let horizon = schedule.horizon;
    let sq: f64 = delta.iter().map(|d| d * d).sum();
    let path_kl = 0.5 * sq * schedule.beta_integral(horizon);
    let steps = 20_000;
    let mut terminal_kl = 0.0;
    for (j, &d) in delta.iter().enumerate() {
        let (mb, vb) = reverse_moments(schedule, m[j], s2, 0.0, (0.0, 1.0), horizon, steps);
        let (ms, vs) = reverse_moments(schedule, m[j], s2, d, (0.0, 1.0), horizon, steps);
        // equal linear parts give equal variances; the mean gap is all that remains
        let v = 0.5 * (vb + vs);
        terminal_kl += (ms - mb).powi(2) / (2.0 * v);
    }
    GaussianKl { path_kl, terminal_kl }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn pair() -> GaussianMixtureData {
        GaussianMixtureData::symmetric_pair(2, 1.5, 0.25).unwrap()
    }

    #[test]
    fn standard_normal_score_is_minus_x() {
        let s = NoiseSchedule::default();
        let g = GaussianMixtureData::gaussian(vec![0.0, 0.0], 1.0).unwrap();
        for &t in &[0.0, 0.2, 0.9] {
            let sc = g.score(&s, t, &[0.4, -1.1]);
            assert!((sc[0] + 0.4).abs() < 1e-12 && (sc[1] - 1.1).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_mixture_score_is_odd() {
        let s = NoiseSchedule::default();
        let d = pair();
        let x = [0.3, -0.7];
        let a = d.score(&s, 0.3, &x);
        let b = d.score(&s, 0.3, &[-0.3, 0.7]);
        assert!((a[0] + b[0]).abs() < 1e-12 && (a[1] + b[1]).abs() < 1e-12);
    }

    #[test]
    fn score_matches_log_density_gradient() {
        let s = NoiseSchedule::default();
        let d = GaussianMixtureData::new(vec![vec![1.0, 0.5], vec![-0.5, -1.0], vec![0.0, 2.0]], 0.3, vec![0.2, 0.5, 0.3]).unwrap();
        let h = 1e-5;
        for &t in &[0.05, 0.4, 1.0] {
            let x = [0.2, 0.6];
            let sc = d.score(&s, t, &x);
            for j in 0..2 {
                let mut up = x;
                up[j] += h;
                let mut dn = x;
                dn[j] -= h;
                let fd = (d.log_density(&s, t, &up) - d.log_density(&s, t, &dn)) / (2.0 * h);
                assert!((fd - sc[j]).abs() < 1e-6, "t={t} j={j}: {fd} vs {}", sc[j]);
            }
        }
    }

    #[test]
    fn sampling_moments() {
        let d = pair();
        let (x, labels) = d.sample(20_000, &mut rng::stream(1, 0));
        let frac = labels.iter().filter(|&&k| k == 0).count() as f64 / labels.len() as f64;
        assert!((frac - 0.5).abs() < 0.02);
        let col0: Vec<f64> = x.column(0).to_vec();
        let var = crate::stats::variance(&col0);
        assert!((var - (2.25 + 0.25)).abs() < 0.1);
    }

    #[test]
    fn posterior_mean_of_single_gaussian() {
        let s = NoiseSchedule::default();
        let g = GaussianMixtureData::gaussian(vec![1.0, -2.0], 0.5).unwrap();
        let t = 0.3;
        let (a, v) = (s.alpha(t), g.marginal_variance(&s, t));
        let x = [0.2, 0.4];
        let pm = g.posterior_mean(&s, t, &x);
        // Tweedie: (sigma^2 score + x) / alpha
        let sc = g.score(&s, t, &x);
        for j in 0..2 {
            let tw = (s.sigma2(t) * sc[j] + x[j]) / a;
            assert!((pm[j] - tw).abs() < 1e-12);
            let direct = g.means[0][j] + a * 0.5 / v * (x[j] - a * g.means[0][j]);
            assert!((pm[j] - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn pf_ode_is_a_flow() {
        let s = NoiseSchedule::default();
        let (m, s2) = ([0.5, -0.3], 0.4);
        let x = [1.2, 0.1];
        let mid = pf_ode_exact(&s, &m, s2, &x, 1.0, 0.4);
        let end = pf_ode_exact(&s, &m, s2, &mid, 0.4, 0.0);
        let direct = pf_ode_exact(&s, &m, s2, &x, 1.0, 0.0);
        for j in 0..2 {
            assert!((end[j] - direct[j]).abs() < 1e-12);
        }
        // the velocity matches -f + g^2 score / 2 numerically
        let t = 0.5;
        let h = 1e-6;
        let up = pf_ode_exact(&s, &m, s2, &x, t, t + h);
        let dn = pf_ode_exact(&s, &m, s2, &x, t, t - h);
        let g = GaussianMixtureData::gaussian(m.to_vec(), s2).unwrap();
        let sc = g.score(&s, t, &x);
        for j in 0..2 {
            let vel = (up[j] - dn[j]) / (2.0 * h);
            let ode = -0.5 * s.beta(t) * x[j] - 0.5 * s.beta(t) * sc[j];
            assert!((vel - ode).abs() < 1e-6, "{vel} vs {ode}");
        }
    }

    #[test]
    fn exact_score_transports_noise_to_data() {
        let s = NoiseSchedule::default();
        let (mean, var) = reverse_moments(&s, 0.7, 0.3, 0.0, (0.0, 1.0), 1.0, 20_000);
        // p_T is not exactly N(0, 1), so a tiny mismatch remains
        assert!((mean - 0.7).abs() < 1e-2, "{mean}");
        assert!((var - 0.3).abs() < 1e-2, "{var}");
    }

    #[test]
    fn kl_pair_properties() {
        let s = NoiseSchedule::default();
        let zero = gaussian_terminal_kl(&s, &[0.0, 0.0], 1.0, &[0.0, 0.0]);
        assert_eq!(zero.path_kl, 0.0);
        assert!(zero.terminal_kl.abs() < 1e-20);
        let k = gaussian_terminal_kl(&s, &[0.0, 0.0], 1.0, &[0.3, -0.2]);
        assert!(k.terminal_kl > 0.0 && k.terminal_kl <= k.path_kl);
        let c = NoiseSchedule::constant(2.0, 1.0).unwrap();
        let k = gaussian_terminal_kl(&c, &[0.0], 1.0, &[0.5]);
        assert!((k.path_kl - 1.0 * 2.0 * 0.25 / 2.0).abs() < 1e-15);
        assert!(k.terminal_kl <= k.path_kl);
    }

    #[test]
    fn score_vjp_matches_finite_differences() {
        let s = NoiseSchedule::default();
        let d = GaussianMixtureData::new(vec![vec![1.0, 0.5], vec![-0.5, -1.0]], 0.3, vec![0.4, 0.6]).unwrap();
        let model = AnalyticScore::new(d.clone(), s);
        let x = ndarray::array![[0.2, -0.1]];
        let cot = ndarray::array![[0.7, -1.3]];
        let t = [0.3];
        let vjp = model.score_input_vjp(&t, x.view(), &[], cot.view()).unwrap();
        let h = 1e-6;
        for j in 0..2 {
            let mut up = x.clone();
            up[[0, j]] += h;
            let mut dn = x.clone();
            dn[[0, j]] -= h;
            let su = d.score(&s, 0.3, up.row(0).as_slice().unwrap());
            let sd = d.score(&s, 0.3, dn.row(0).as_slice().unwrap());
            let fd: f64 = (0..2).map(|k| cot[[0, k]] * (su[k] - sd[k]) / (2.0 * h)).sum();
            assert!((fd - vjp[[0, j]]).abs() < 1e-6, "{fd} vs {}", vjp[[0, j]]);
        }
    }

    #[test]
    fn dsm_irreducible_value() {
        let s = NoiseSchedule::default();
        let g = GaussianMixtureData::gaussian(vec![1.0, 1.0], 0.5).unwrap();
        let t = 0.2;
        let a = s.alpha(t);
        let expected = 2.0 * a * a * 0.5 / (a * a * 0.5 + s.sigma2(t));
        assert!((g.dsm_irreducible(&s, t).unwrap() - expected).abs() < 1e-15);
    }
}
