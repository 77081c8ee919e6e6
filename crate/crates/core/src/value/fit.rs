use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::nn::{MlpInput, Optimizer, OptimizerKind};
use crate::rng;
use crate::score::ScoreModel;
use crate::sde::Trajectory;
use crate::value::net::{BranchInput, Parts};
use crate::value::ValueNet;

/// Regression targets `(t, x, c) -> R`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueDataset {
    pub t: Vec<f64>,
    pub x: Array2<f64>,
    pub class: Vec<usize>,
    pub target: Vec<f64>,
}

impl ValueDataset {
    pub fn new(t: Vec<f64>, x: Array2<f64>, class: Vec<usize>, target: Vec<f64>) -> Result<Self> {
        let n = x.nrows();
        ensure(t.len() == n && class.len() == n && target.len() == n, || {
            "value dataset columns must have equal length".into()
        })?;
        Ok(Self { t, x, class, target })
    }

    /// Every non-terminal node of every trajectory with its return-to-go.
    pub fn from_trajectories(trajs: &[Trajectory]) -> Result<Self> {
        if trajs.is_empty() {
            return Err(Error::Empty("trajectory set"));
        }
        let d = trajs[0].dim;
        let total: usize = trajs.iter().map(|t| t.n_steps()).sum();
        let mut x = Array2::zeros((total, d));
        let (mut t, mut class, mut target) = (Vec::with_capacity(total), Vec::with_capacity(total), Vec::with_capacity(total));
        let mut row = 0;
        for tr in trajs {
            for i in 0..tr.n_steps() {
                t.push(tr.times[i]);
                class.push(tr.class);
                target.push(tr.returns[i]);
                for j in 0..d {
                    x[[row, j]] = tr.state(i)[j];
                }
                row += 1;
            }
        }
        Self::new(t, x, class, target)
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            t: idx.iter().map(|&i| self.t[i]).collect(),
            x: self.x.select(Axis(0), idx),
            class: idx.iter().map(|&i| self.class[i]).collect(),
            target: idx.iter().map(|&i| self.target[i]).collect(),
        }
    }

    /// Same inputs with targets randomly permuted.
    pub fn shuffled_targets(&self, seed: u64) -> Self {
        let mut out = self.clone();
        out.target.shuffle(&mut rng::stream(seed, 0));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub holdout_frac: f64,
    /// Trailing fraction of the denoiser's parameters trained together with
    /// the corrector; 0 keeps the reward-mean branch frozen.
    pub predictor_fraction: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 256,
            lr: 3e-3,
            optimizer: OptimizerKind::default(),
            holdout_frac: 0.2,
            predictor_fraction: 0.0,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        ensure(self.batch_size > 0, || "value batch size must be positive".into())?;
        ensure(self.lr >= 0.0, || "value learning rate must be non-negative".into())?;
        ensure(self.holdout_frac > 0.0 && self.holdout_frac < 1.0, || {
            format!("holdout fraction {} must lie in (0, 1)", self.holdout_frac)
        })?;
        ensure((0.0..=1.0).contains(&self.predictor_fraction), || {
            "predictor fraction must lie in [0, 1]".into()
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub initial_holdout_mse: f64,
    pub best_holdout_mse: f64,
    pub best_epoch: usize,
    /// Held-out MSE after each epoch (entry 0 is before training).
    pub holdout_curve: Vec<f64>,
    pub train_mse: f64,
    pub holdout_target_variance: f64,
}

struct Prepared {
    base: Vec<f64>,
    out: Vec<f64>,
    tau: Vec<f64>,
    corr_in: Array2<f64>,
}

impl<D: ScoreModel> ValueNet<D> {
    fn prepare(&self, data: &ValueDataset) -> Result<Prepared> {
        let parts = self.parts(&data.t, data.x.view(), &data.class)?;
        let mut base = Vec::with_capacity(data.len());
        let mut out = parts.out.clone();
        for i in 0..data.len() {
            let c = data.class[i];
            if parts.tau[i] == 0.0 {
                base.push(self.reward.eval(&data.x.row(i).to_vec(), c)?);
                out[i] = 0.0;
            } else {
                base.push(parts.skip[i] * self.reward.eval(&parts.pred_in.row(i).to_vec(), c)?);
            }
        }
        Ok(Prepared {
            base,
            out,
            tau: parts.tau,
            corr_in: parts.corr_in,
        })
    }

    fn corrector_input<'a>(&self, tau: &'a [f64], x: ArrayView2<'a, f64>, class: &'a [usize]) -> MlpInput<'a> {
        MlpInput::new(tau, x, self.corrector_classes(class))
    }

    fn predict(&self, p: &Prepared, class: &[usize]) -> Result<Vec<f64>> {
        let input = self.corrector_input(&p.tau, p.corr_in.view(), class);
        let f = self.corrector().forward_batch(self.params().as_slice(), &input)?;
        Ok((0..p.base.len()).map(|i| p.base[i] + p.out[i] * f[[i, 0]]).collect())
    }
}

fn mse(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64
}

/// Mean squared error of the value network on `data`.
pub fn value_mse<D: ScoreModel>(vnet: &ValueNet<D>, data: &ValueDataset) -> Result<f64> {
    let v = vnet.value_batch(&data.t, data.x.view(), &data.class)?;
    Ok(mse(&v, &data.target))
}

/// Deterministic 80/20-style split by `holdout_frac`.
pub fn split_indices(n: usize, holdout_frac: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, 1));
    let n_hold = ((n as f64) * holdout_frac).round().max(1.0) as usize;
    let hold = idx[..n_hold.min(n)].to_vec();
    let train = idx[n_hold.min(n)..].to_vec();
    (train, hold)
}

/// Fits `F_phi` (and optionally a trailing fraction of the denoiser) by
/// minibatch MSE regression, restoring the parameters with the lowest
/// held-out error.
pub fn fit_value<D: ScoreModel>(vnet: &mut ValueNet<D>, data: &ValueDataset, cfg: &FitConfig) -> Result<FitReport> {
    cfg.validate()?;
    if data.len() < 2 {
        return Err(Error::Empty("value dataset"));
    }
    let (train_idx, hold_idx) = split_indices(data.len(), cfg.holdout_frac, cfg.seed);
    let train = data.subset(&train_idx);
    let hold = data.subset(&hold_idx);
    let train_pred = cfg.predictor_fraction > 0.0;
    if train_pred && vnet.denoiser.network().is_none() {
        return Err(Error::InvalidParameter("predictor training needs a network denoiser".into()));
    }
    let n_den = vnet.denoiser.network().map(|n| n.params().len()).unwrap_or(0);
    let n_trainable_den = if train_pred {
        ((n_den as f64) * cfg.predictor_fraction).ceil() as usize
    } else {
        0
    };

    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr, vnet.params().len());
    let mut opt_den = Optimizer::new(cfg.optimizer, cfg.lr, n_den);
    let mut prep_train = if train_pred { None } else { Some(vnet.prepare(&train)?) };
    let prep_hold = |v: &ValueNet<D>| -> Result<f64> {
        let p = v.prepare(&hold)?;
        Ok(mse(&v.predict(&p, &hold.class)?, &hold.target))
    };
    let initial = prep_hold(vnet)?;
    let mut curve = vec![initial];
    let mut best = (initial, 0usize, vnet.params().clone(), vnet.denoiser.network().map(|n| n.params().clone()));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle_rng = rng::stream(cfg.seed, 2);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = train.subset(chunk);
            let b = chunk.len() as f64;
            let prepared;
            let p = match &prep_train {
                Some(full) => {
                    prepared = Prepared {
                        base: chunk.iter().map(|&i| full.base[i]).collect(),
                        out: chunk.iter().map(|&i| full.out[i]).collect(),
                        tau: chunk.iter().map(|&i| full.tau[i]).collect(),
                        corr_in: full.corr_in.select(Axis(0), chunk),
                    };
                    &prepared
                }
                None => {
                    prepared = vnet.prepare(&batch)?;
                    &prepared
                }
            };
            let input = vnet.corrector_input(&p.tau, p.corr_in.view(), &batch.class);
            let mut resid = vec![0.0; chunk.len()];
            let result = vnet.corrector().grad_params(vnet.params().as_slice(), &input, |f| {
                let mut loss = 0.0;
                let mut g = Array2::zeros(f.raw_dim());
                for i in 0..chunk.len() {
                    let r = p.base[i] + p.out[i] * f[[i, 0]] - batch.target[i];
                    resid[i] = r;
                    loss += r * r;
                    g[[i, 0]] = 2.0 * r * p.out[i] / b;
                }
                (loss / b, g)
            });
            let (_, grad) = match result {
                Ok(v) => v,
                Err(Error::NonFinite { .. }) => {
                    return Err(Error::Diverged {
                        iteration: epoch,
                        last_good: Some(Box::new(best.2.clone())),
                    })
                }
                Err(e) => return Err(e),
            };
            if train_pred {
                let g_den = predictor_gradient(vnet, &batch, &resid)?;
                let den = vnet.denoiser.network_mut().expect("checked above");
                let start = n_den - n_trainable_den;
                let mut masked = vec![0.0; n_den];
                masked[start..].copy_from_slice(&g_den[start..]);
                opt_den.step(den.params_mut().as_mut_slice(), &masked)?;
            }
            opt.step(vnet.params_mut().as_mut_slice(), grad.as_slice())?;
        }
        if train_pred {
            prep_train = None;
        }
        let h = prep_hold(vnet)?;
        if !h.is_finite() {
            return Err(Error::Diverged {
                iteration: epoch,
                last_good: Some(Box::new(best.2.clone())),
            });
        }
        curve.push(h);
        if h < best.0 {
            best = (h, epoch, vnet.params().clone(), vnet.denoiser.network().map(|n| n.params().clone()));
        }
    }
    *vnet.params_mut() = best.2;
    if let (Some(p), Some(den)) = (best.3, vnet.denoiser.network_mut()) {
        *den.params_mut() = p;
    }
    let train_mse = value_mse(vnet, &train)?;
    Ok(FitReport {
        initial_holdout_mse: initial,
        best_holdout_mse: best.0,
        best_epoch: best.1,
        holdout_curve: curve,
        train_mse,
        holdout_target_variance: crate::stats::variance(&hold.target),
    })
}

/// Gradient of `mean r_i^2` with respect to the denoiser parameters, given
/// residuals `r_i = V_i - R_i`.
pub(super) fn predictor_gradient<D: ScoreModel>(vnet: &ValueNet<D>, batch: &ValueDataset, resid: &[f64]) -> Result<Vec<f64>> {
    let net = vnet.denoiser.network().expect("network denoiser");
    let parts: Parts = vnet.parts(&batch.t, batch.x.view(), &batch.class)?;
    let (n, d) = batch.x.dim();
    let b = n as f64;
    let mut g_xhat = Array2::zeros((n, d));
    if vnet.arch.predictor == BranchInput::Denoised {
        for i in 0..n {
            let (_, g) = vnet.reward.eval_grad(&parts.pred_in.row(i).to_vec(), batch.class[i])?;
            for j in 0..d {
                g_xhat[[i, j]] += 2.0 * resid[i] / b * parts.skip[i] * g[j];
            }
        }
    }
    if vnet.arch.corrector == BranchInput::Denoised {
        let cot = Array2::from_shape_fn((n, 1), |(i, _)| 2.0 * resid[i] / b * parts.out[i]);
        let input = vnet.corrector_input(&parts.tau, parts.corr_in.view(), &batch.class);
        g_xhat += &vnet.corrector().input_vjp(vnet.params().as_slice(), &input, cot.view())?;
    }
    for (i, &tf) in parts.tau.iter().enumerate() {
        let k = if tf == 0.0 {
            0.0
        } else {
            vnet.schedule.sigma2(tf) / vnet.schedule.alpha(tf)
        };
        for j in 0..d {
            g_xhat[[i, j]] *= k;
        }
    }
    let mut grad = vec![0.0; net.params().len()];
    net.score_param_vjp(&parts.tau, batch.x.view(), &batch.class, g_xhat.view(), &mut grad)?;
    Ok(grad)
}
