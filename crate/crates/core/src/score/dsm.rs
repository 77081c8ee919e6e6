use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::nn::{MlpInput, Optimizer, OptimizerKind, ParamVector};
use crate::rng;
use crate::score::ScoreNet;
use crate::sde::NoiseSchedule;
use crate::stats;

/// Training points with optional class labels (empty when unconditional).
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub class: Vec<usize>,
}

impl Dataset {
    pub fn new(x: Array2<f64>, class: Vec<usize>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::Empty("dataset"));
        }
        if !class.is_empty() && class.len() != x.nrows() {
            return Err(Error::ShapeMismatch {
                expected: x.nrows(),
                got: class.len(),
            });
        }
        Ok(Self { x, class })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn class_of(&self, i: usize) -> usize {
        self.class.get(i).copied().unwrap_or(0)
    }
}

/// Distribution of the diffusion times in a denoising batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeSampling {
    #[default]
    Uniform,
    /// `log t` uniform on `[log t_min, log T]`; puts more steps near the data.
    LogUniform,
}

/// One minibatch of the denoising objective.
#[derive(Debug, Clone)]
pub struct DsmBatch {
    pub x0: Array2<f64>,
    /// Forward diffusion times.
    pub t: Vec<f64>,
    pub eps: Array2<f64>,
    pub class: Vec<usize>,
    /// `lambda(t)` per row.
    pub weight: Vec<f64>,
}

impl DsmBatch {
    /// Draws `size` rows with replacement, `t ~ U[t_min, T]` and `lambda = sigma_t^2`.
    pub fn sample<R: Rng + ?Sized>(
        schedule: &NoiseSchedule,
        data: &Dataset,
        size: usize,
        t_min: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Self::sample_with(schedule, data, size, t_min, TimeSampling::Uniform, rng)
    }

    pub fn sample_with<R: Rng + ?Sized>(
        schedule: &NoiseSchedule,
        data: &Dataset,
        size: usize,
        t_min: f64,
        times: TimeSampling,
        rng: &mut R,
    ) -> Result<Self> {
        ensure(size > 0, || "batch size must be positive".into())?;
        ensure(t_min > 0.0 && t_min < schedule.horizon, || {
            format!("t_min {t_min} must lie in (0, T)")
        })?;
        let d = data.dim();
        let mut x0 = Array2::zeros((size, d));
        let mut class = Vec::with_capacity(size);
        let mut t = Vec::with_capacity(size);
        for i in 0..size {
            let k = rng.gen_range(0..data.len());
            x0.row_mut(i).assign(&data.x.row(k));
            class.push(data.class_of(k));
            t.push(match times {
                TimeSampling::Uniform => rng.gen_range(t_min..=schedule.horizon),
                TimeSampling::LogUniform => rng.gen_range(t_min.ln()..=schedule.horizon.ln()).exp().min(schedule.horizon),
            });
        }
        let eps = rng::normal_matrix(rng, size, d);
        let weight = t.iter().map(|&s| schedule.sigma2(s)).collect();
        Ok(Self { x0, t, eps, class, weight })
    }

    /// Appends a copy of every row with the noise negated. Paired residuals
    /// cancel the `eps / sigma` target noise to first order.
    pub fn with_antithetic(mut self) -> Self {
        let flipped = self.eps.mapv(|e| -e);
        self.x0 = ndarray::concatenate(Axis(0), &[self.x0.view(), self.x0.view()]).expect("same width");
        self.eps = ndarray::concatenate(Axis(0), &[self.eps.view(), flipped.view()]).expect("same width");
        self.t.extend_from_within(..);
        self.class.extend_from_within(..);
        self.weight.extend_from_within(..);
        self
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Perturbed inputs `alpha_t x0 + sigma_t eps`.
    pub fn noisy(&self, schedule: &NoiseSchedule) -> Array2<f64> {
        let mut xt = self.x0.clone();
        for (i, &t) in self.t.iter().enumerate() {
            let (a, s) = (schedule.alpha(t), schedule.sigma(t));
            for j in 0..xt.ncols() {
                xt[[i, j]] = a * self.x0[[i, j]] + s * self.eps[[i, j]];
            }
        }
        xt
    }

    fn sigmas(&self, schedule: &NoiseSchedule) -> Result<Vec<f64>> {
        self.t
            .iter()
            .map(|&t| {
                let s = schedule.sigma(t);
                if s == 0.0 {
                    Err(Error::Singular("sigma_t = 0 in a denoising batch"))
                } else {
                    Ok(s)
                }
            })
            .collect()
    }
}

/// Denoising loss `mean_i lambda_i |s_i + eps_i / sigma_i|^2` for an arbitrary
/// score function, together with its gradient in the score outputs.
pub fn dsm_loss_with<F>(schedule: &NoiseSchedule, batch: &DsmBatch, score: F) -> Result<(f64, Array2<f64>)>
where
    F: FnOnce(&[f64], ArrayView2<f64>, &[usize]) -> Result<Array2<f64>>,
{
    if batch.is_empty() {
        return Err(Error::Empty("denoising batch"));
    }
    let sig = batch.sigmas(schedule)?;
    let xt = batch.noisy(schedule);
    let s = score(&batch.t, xt.view(), &batch.class)?;
    Ok(residual_loss(batch, &sig, s.view()))
}

fn residual_loss(batch: &DsmBatch, sig: &[f64], s: ArrayView2<f64>) -> (f64, Array2<f64>) {
    let n = batch.len() as f64;
    let mut grad = Array2::zeros(s.raw_dim());
    let mut total = 0.0;
    for i in 0..batch.len() {
        let lam = batch.weight[i];
        for j in 0..s.ncols() {
            let r = s[[i, j]] + batch.eps[[i, j]] / sig[i];
            total += lam * r * r;
            grad[[i, j]] = 2.0 * lam * r / n;
        }
    }
    (total / n, grad)
}

pub fn dsm_loss(schedule: &NoiseSchedule, net: &ScoreNet, batch: &DsmBatch) -> Result<f64> {
    Ok(dsm_loss_with(schedule, batch, |t, x, c| net.score_batch(t, x, c))?.0)
}

/// Loss and parameter gradient on one batch.
pub fn dsm_gradient(schedule: &NoiseSchedule, net: &ScoreNet, batch: &DsmBatch) -> Result<(f64, ParamVector)> {
    if batch.is_empty() {
        return Err(Error::Empty("denoising batch"));
    }
    let sig = batch.sigmas(schedule)?;
    let xt = batch.noisy(schedule);
    let class: &[usize] = if net.spec().context_dim > 0 { &batch.class } else { &[] };
    let input = MlpInput::new(&batch.t, xt.view(), class);
    net.mlp()
        .grad_params(net.params().as_slice(), &input, |s| residual_loss(batch, &sig, s))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Learning rate reached at the last step under cosine decay.
    pub lr_final: f64,
    pub optimizer: OptimizerKind,
    /// Lower end of the training-time range as a fraction of `T`.
    pub t_min_frac: f64,
    pub time_sampling: TimeSampling,
    /// Lower bound on the loss weight, `lambda(t) = max(sigma_t^2, weight_floor)`.
    pub weight_floor: f64,
    /// Pair every noise draw with its negation (half the batch is mirrored).
    pub antithetic: bool,
    /// Exponential moving average of the iterates; 0 disables it.
    pub ema_decay: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            batch_size: 512,
            lr: 3e-3,
            lr_final: 1e-4,
            optimizer: OptimizerKind::default(),
            t_min_frac: 0.01,
            time_sampling: TimeSampling::default(),
            weight_floor: 0.0,
            antithetic: false,
            ema_decay: 0.995,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure(self.steps > 0, || "pretraining steps must be positive".into())?;
        ensure(self.batch_size > 0, || "batch size must be positive".into())?;
        ensure(self.lr >= 0.0 && self.lr_final >= 0.0, || "learning rates must be non-negative".into())?;
        ensure(self.t_min_frac > 0.0 && self.t_min_frac < 1.0, || {
            format!("t_min_frac {} must lie in (0, 1)", self.t_min_frac)
        })?;
        ensure(self.weight_floor >= 0.0 && self.weight_floor.is_finite(), || "weight_floor must be non-negative".into())?;
        ensure((0.0..1.0).contains(&self.ema_decay), || "ema_decay must lie in [0, 1)".into())
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        let frac = if self.steps > 1 { step as f64 / (self.steps - 1) as f64 } else { 0.0 };
        self.lr_final + 0.5 * (self.lr - self.lr_final) * (1.0 + (std::f64::consts::PI * frac).cos())
    }
}

#[derive(Debug, Clone)]
pub struct PretrainReport {
    pub losses: Vec<f64>,
    /// Block means over the first 80% of training never rise by more than
    /// their combined sampling error.
    pub smoothed_monotone: bool,
}

/// Fits `net` to `data` by denoising score matching.
pub fn pretrain(
    net: &mut ScoreNet,
    data: &Dataset,
    schedule: &NoiseSchedule,
    cfg: &PretrainConfig,
) -> Result<PretrainReport> {
    cfg.validate()?;
    schedule.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    if data.dim() != net.dim() {
        return Err(Error::ShapeMismatch {
            expected: net.dim(),
            got: data.dim(),
        });
    }
    let mut rng = rng::stream(cfg.seed, 0);
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr, net.params().len());
    let mut ema = (cfg.ema_decay > 0.0).then(|| net.params().as_slice().to_vec());
    let mut losses = Vec::with_capacity(cfg.steps);
    let t_min = cfg.t_min_frac * schedule.horizon;
    for step in 0..cfg.steps {
        let mut batch = if cfg.antithetic {
            DsmBatch::sample_with(schedule, data, cfg.batch_size.div_ceil(2), t_min, cfg.time_sampling, &mut rng)?.with_antithetic()
        } else {
            DsmBatch::sample_with(schedule, data, cfg.batch_size, t_min, cfg.time_sampling, &mut rng)?
        };
        batch.weight.iter_mut().for_each(|w| *w = w.max(cfg.weight_floor));
        let (loss, grad) = match dsm_gradient(schedule, net, &batch) {
            Ok(v) => v,
            Err(Error::NonFinite { .. }) => {
                return Err(Error::Diverged {
                    iteration: step,
                    last_good: Some(Box::new(net.params().clone())),
                })
            }
            Err(e) => return Err(e),
        };
        if grad.as_slice().iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged {
                iteration: step,
                last_good: Some(Box::new(net.params().clone())),
            });
        }
        losses.push(loss);
        opt.lr = cfg.lr_at(step);
        opt.step(net.params_mut().as_mut_slice(), grad.as_slice())?;
        if let Some(avg) = ema.as_mut() {
            let d = cfg.ema_decay;
            for (a, p) in avg.iter_mut().zip(net.params().as_slice()) {
                *a = d * *a + (1.0 - d) * p;
            }
        }
    }
    if let Some(avg) = ema {
        net.set_params(&avg)?;
    }
    let smoothed_monotone = smoothed_decrease(&losses, 0.8, 8);
    Ok(PretrainReport { losses, smoothed_monotone })
}

/// Splits the leading `frac` of `losses` into `blocks` and checks that no
/// block mean exceeds its predecessor by more than two combined standard errors.
pub fn smoothed_decrease(losses: &[f64], frac: f64, blocks: usize) -> bool {
    let n = ((losses.len() as f64) * frac) as usize;
    let size = n / blocks.max(1);
    if size < 2 {
        return true;
    }
    let est: Vec<stats::Estimate> = (0..blocks)
        .map(|b| stats::Estimate::from_samples(&losses[b * size..(b + 1) * size]))
        .collect();
    est.windows(2).all(|w| {
        let se = (w[0].std_error.powi(2) + w[1].std_error.powi(2)).sqrt();
        w[1].mean <= w[0].mean + 2.0 * se
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::MlpSpec;
    use ndarray::array;

    fn one_point() -> Dataset {
        Dataset::new(array![[0.7, -0.4]], vec![]).unwrap()
    }

    #[test]
    fn exact_conditional_score_has_zero_loss() {
        let sch = NoiseSchedule::default();
        let data = one_point();
        let batch = DsmBatch::sample(&sch, &data, 64, 0.01, &mut rng::stream(1, 0)).unwrap();
        let (loss, _) = dsm_loss_with(&sch, &batch, |t, x, _| {
            let mut s = x.to_owned();
            for (i, &ti) in t.iter().enumerate() {
                let (a, v) = (sch.alpha(ti), sch.sigma2(ti));
                for j in 0..2 {
                    s[[i, j]] = -(x[[i, j]] - a * data.x[[0, j]]) / v;
                }
            }
            Ok(s)
        })
        .unwrap();
        assert!(loss.abs() < 1e-20, "loss {loss}");
    }

    #[test]
    fn zero_weight_gives_zero_loss() {
        let sch = NoiseSchedule::default();
        let mut batch = DsmBatch::sample(&sch, &one_point(), 16, 0.01, &mut rng::stream(1, 0)).unwrap();
        batch.weight.iter_mut().for_each(|w| *w = 0.0);
        let (loss, g) = dsm_loss_with(&sch, &batch, |_, x, _| Ok(x.to_owned())).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn zero_sigma_is_rejected() {
        let sch = NoiseSchedule::default();
        let mut batch = DsmBatch::sample(&sch, &one_point(), 4, 0.01, &mut rng::stream(1, 0)).unwrap();
        batch.t[2] = 0.0;
        assert!(matches!(
            dsm_loss_with(&sch, &batch, |_, x, _| Ok(x.to_owned())),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn pretraining_is_deterministic() {
        let sch = NoiseSchedule::default();
        let data = Dataset::new(rng::normal_matrix(&mut rng::stream(3, 0), 200, 2), vec![]).unwrap();
        let cfg = PretrainConfig {
            steps: 50,
            batch_size: 32,
            ..Default::default()
        };
        let run = || {
            let mut net = ScoreNet::init(MlpSpec::small(2, 2), 1.0, &mut rng::stream(9, 0)).unwrap();
            let rep = pretrain(&mut net, &data, &sch, &cfg).unwrap();
            (rep.losses, net.params().as_slice().to_vec())
        };
        let (l1, p1) = run();
        let (l2, p2) = run();
        assert_eq!(l1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), l2.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(p1, p2);
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let cfg = PretrainConfig::default();
        assert!((cfg.lr_at(0) - cfg.lr).abs() < 1e-15);
        assert!((cfg.lr_at(cfg.steps - 1) - cfg.lr_final).abs() < 1e-15);
    }

    #[test]
    fn monotone_check() {
        let down: Vec<f64> = (0..400).map(|i| 10.0 / (1.0 + i as f64)).collect();
        assert!(smoothed_decrease(&down, 0.8, 8));
        let up: Vec<f64> = (0..400).map(|i| i as f64).collect();
        assert!(!smoothed_decrease(&up, 0.8, 8));
    }
}
