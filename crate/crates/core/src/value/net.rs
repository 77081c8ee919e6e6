use std::f64::consts::FRAC_PI_2;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Checkpoint, Mlp, MlpInput, MlpSpec, ParamVector, Role};
use crate::score::ScoreModel;
use crate::sde::NoiseSchedule;
use crate::value::RewardModel;

/// Which state a branch of the value network reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchInput {
    Raw,
    Denoised,
}

/// `c_out` as a function of remaining time `tau = T - t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutSchedule {
    Sin,
    OneMinusCos,
}

/// `V = c_skip(tau) RM(predictor input) + c_out(tau) F(t, corrector input, c)`
/// with `c_skip(tau) = cos(pi tau / 2T)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValueArch {
    pub predictor: BranchInput,
    pub corrector: BranchInput,
    pub c_out: OutSchedule,
}

impl Default for ValueArch {
    fn default() -> Self {
        Self {
            predictor: BranchInput::Denoised,
            corrector: BranchInput::Raw,
            c_out: OutSchedule::Sin,
        }
    }
}

impl ValueArch {
    /// The five ablation configurations, named by predictor and corrector input.
    pub fn ablation() -> [(&'static str, ValueArch); 5] {
        use BranchInput::*;
        use OutSchedule::*;
        let a = |predictor, corrector, c_out| ValueArch {
            predictor,
            corrector,
            c_out,
        };
        [
            ("baseline", a(Raw, Raw, OneMinusCos)),
            ("orig+denoised", a(Raw, Denoised, OneMinusCos)),
            ("denoised+orig", a(Denoised, Raw, OneMinusCos)),
            ("denoised+denoised", a(Denoised, Denoised, OneMinusCos)),
            ("denoised+orig(sin)", a(Denoised, Raw, Sin)),
        ]
    }

    fn needs_denoiser(&self) -> bool {
        self.predictor == BranchInput::Denoised || self.corrector == BranchInput::Denoised
    }
}

/// `c_skip(tau)`; exactly 1 at `tau = 0`.
pub fn c_skip(tau: f64, horizon: f64) -> f64 {
    if tau == 0.0 {
        1.0
    } else {
        (FRAC_PI_2 * tau / horizon).cos()
    }
}

/// `c_out(tau)`; exactly 0 at `tau = 0`.
pub fn c_out(kind: OutSchedule, tau: f64, horizon: f64) -> f64 {
    if tau == 0.0 {
        return 0.0;
    }
    let u = FRAC_PI_2 * tau / horizon;
    match kind {
        OutSchedule::Sin => u.sin(),
        OutSchedule::OneMinusCos => 1.0 - u.cos(),
    }
}

/// A state-value function with an input gradient.
pub trait Critic: Send + Sync {
    fn value_batch(&self, t: &[f64], x: ArrayView2<f64>, class: &[usize]) -> Result<Vec<f64>>;

    fn grad_x_batch(&self, t: &[f64], x: ArrayView2<f64>, class: &[usize]) -> Result<Array2<f64>>;
}

/// Structured value network on reverse time `t`.
#[derive(Debug, Clone)]
pub struct ValueNet<D> {
    pub reward: RewardModel,
    pub schedule: NoiseSchedule,
    pub denoiser: D,
    pub arch: ValueArch,
    corrector: Mlp,
    params: ParamVector,
}

/// Intermediate quantities of one batched evaluation.
pub(crate) struct Parts {
    pub tau: Vec<f64>,
    pub skip: Vec<f64>,
    pub out: Vec<f64>,
    pub pred_in: Array2<f64>,
    pub corr_in: Array2<f64>,
}

impl<D: ScoreModel> ValueNet<D> {
    pub fn new(
        reward: RewardModel,
        schedule: NoiseSchedule,
        denoiser: D,
        arch: ValueArch,
        corrector_spec: MlpSpec,
        params: ParamVector,
    ) -> Result<Self> {
        let corrector = Mlp::new(corrector_spec)?;
        let spec = corrector.spec();
        if spec.output_dim != 1 || spec.input_dim != reward.dim() || denoiser.dim() != reward.dim() {
            return Err(Error::InvalidParameter(
                "corrector must map R^d to R and match the reward and denoiser dimension".into(),
            ));
        }
        if params.len() != corrector.n_params() {
            return Err(Error::ShapeMismatch {
                expected: corrector.n_params(),
                got: params.len(),
            });
        }
        Ok(Self {
            reward,
            schedule,
            denoiser,
            arch,
            corrector,
            params,
        })
    }

    /// Fresh value network with `F = 0`.
    pub fn init<R: Rng + ?Sized>(
        reward: RewardModel,
        schedule: NoiseSchedule,
        denoiser: D,
        arch: ValueArch,
        corrector_spec: MlpSpec,
        rng: &mut R,
    ) -> Result<Self> {
        let mlp = Mlp::new(corrector_spec.clone())?;
        let mut p = mlp.init_params(rng);
        mlp.zero_final_layer(p.as_mut_slice());
        Self::new(reward, schedule, denoiser, arch, corrector_spec, p)
    }

    pub fn corrector(&self) -> &Mlp {
        &self.corrector
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    /// Replaces the denoiser, keeping the corrector.
    pub fn with_denoiser<E: ScoreModel>(self, denoiser: E) -> Result<ValueNet<E>> {
        ValueNet::new(
            self.reward,
            self.schedule,
            denoiser,
            self.arch,
            self.corrector.spec().clone(),
            self.params,
        )
    }

    /// Corrector checkpoint linked to the checksum of the denoiser checkpoint.
    pub fn to_checkpoint(&self, denoiser_checksum: [u8; 32]) -> Checkpoint {
        Checkpoint::new(Role::ResidualCorrector, self.corrector.spec().clone(), &self.params).with_link(denoiser_checksum)
    }

    pub(crate) fn corrector_classes<'a>(&self, class: &'a [usize]) -> &'a [usize] {
        if self.corrector.spec().context_dim > 0 {
            class
        } else {
            &[]
        }
    }

    pub(crate) fn parts(&self, t: &[f64], x: ArrayView2<f64>, class: &[usize]) -> Result<Parts> {
        if t.len() != x.nrows() {
            return Err(Error::ShapeMismatch {
                expected: x.nrows(),
                got: t.len(),
            });
        }
        let horizon = self.schedule.horizon;
        for &ti in t {
            self.schedule.check_time(ti)?;
        }
        let tau: Vec<f64> = t.iter().map(|&ti| self.schedule.forward_time(ti)).collect();
        let skip = tau.iter().map(|&s| c_skip(s, horizon)).collect();
        let out = tau.iter().map(|&s| c_out(self.arch.c_out, s, horizon)).collect();
        let xhat = if self.arch.needs_denoiser() {
            let s = self.denoiser.score_batch(&tau, x, class)?;
            let mut xh = x.to_owned();
            for (i, &tf) in tau.iter().enumerate() {
                if tf == 0.0 {
                    continue;
                }
                let (a, v) = (self.schedule.alpha(tf), self.schedule.sigma2(tf));
                for j in 0..x.ncols() {
                    xh[[i, j]] = (v * s[[i, j]] + x[[i, j]]) / a;
                }
            }
            Some(xh)
        } else {
            None
        };
        let pick = |b: BranchInput| match (b, &xhat) {
            (BranchInput::Denoised, Some(xh)) => xh.clone(),
            _ => x.to_owned(),
        };
        Ok(Parts {
            pred_in: pick(self.arch.predictor),
            corr_in: pick(self.arch.corrector),
            tau,
            skip,
            out,
        })
    }

    pub(crate) fn corrector_values(&self, parts: &Parts, class: &[usize]) -> Result<Vec<f64>> {
        let input = MlpInput::new(&parts.tau, parts.corr_in.view(), self.corrector_classes(class));
        let f = self.corrector.forward_batch(self.params.as_slice(), &input)?;
        Ok(f.column(0).to_vec())
    }

    fn class_of(class: &[usize], i: usize) -> usize {
        class.get(i).copied().unwrap_or(0)
    }

    /// Values at per-row reverse times. Rows at `t = T` return `RM(x, c)`
    /// without touching the corrector.
    pub fn value_batch(&self, t: &[f64], x: ArrayView2<f64>, class: &[usize]) -> Result<Vec<f64>> {
        let parts = self.parts(t, x, class)?;
        let f = self.corrector_values(&parts, class)?;
        let mut v = Vec::with_capacity(t.len());
        for i in 0..t.len() {
            let c = Self::class_of(class, i);
            if parts.tau[i] == 0.0 {
                v.push(self.reward.eval(&x.row(i).to_vec(), c)?);
                continue;
            }
            let rm = self.reward.eval(&parts.pred_in.row(i).to_vec(), c)?;
            v.push(parts.skip[i] * rm + parts.out[i] * f[i]);
        }
        Ok(v)
    }

    pub fn value(&self, t: f64, x: &[f64], class: usize) -> Result<f64> {
        let xv = ArrayView2::from_shape((1, x.len()), x).map_err(|_| Error::ShapeMismatch {
            expected: self.reward.dim(),
            got: x.len(),
        })?;
        Ok(self.value_batch(&[t], xv, &[class])?[0])
    }

    /// Pulls a cotangent on the denoised input back to the raw input:
    /// `(g + sigma^2 J_s^T g) / alpha`.
    fn through_denoiser(&self, parts: &Parts, x: ArrayView2<f64>, class: &[usize], g: Array2<f64>) -> Result<Array2<f64>> {
        let back = self.denoiser.score_input_vjp(&parts.tau, x, class, g.view())?;
        let mut out = g;
        for (i, &tf) in parts.tau.iter().enumerate() {
            if tf == 0.0 {
                continue;
            }
            let (a, v) = (self.schedule.alpha(tf), self.schedule.sigma2(tf));
            for j in 0..out.ncols() {
                out[[i, j]] = (out[[i, j]] + v * back[[i, j]]) / a;
            }
        }
        Ok(out)
    }

    /// `sum_i cot_i dV(t_i, x_i) / d params` over the corrector parameters.
    pub fn param_vjp(&self, t: &[f64], x: ArrayView2<f64>, class: &[usize], cot: &[f64]) -> Result<Vec<f64>> {
        let parts = self.parts(t, x, class)?;
        let d_out = Array2::from_shape_fn((t.len(), 1), |(i, _)| if parts.tau[i] == 0.0 { 0.0 } else { parts.out[i] * cot[i] });
        let input = MlpInput::new(&parts.tau, parts.corr_in.view(), self.corrector_classes(class));
        let tape = self.corrector.forward_tape(self.params.as_slice(), &input)?;
        let mut grad = vec![0.0; self.params.len()];
        self.corrector.backward(self.params.as_slice(), &tape, d_out.view(), Some(&mut grad));
        Ok(grad)
    }

    pub fn grad_x_batch(&self, t: &[f64], x: ArrayView2<f64>, class: &[usize]) -> Result<Array2<f64>> {
        let parts = self.parts(t, x, class)?;
        let (b, d) = x.dim();
        let mut g_pred = Array2::zeros((b, d));
        for i in 0..b {
            let c = Self::class_of(class, i);
            let (_, g) = self.reward.eval_grad(&parts.pred_in.row(i).to_vec(), c)?;
            for j in 0..d {
                g_pred[[i, j]] = parts.skip[i] * g[j];
            }
        }
        let cot = Array2::from_shape_fn((b, 1), |(i, _)| parts.out[i]);
        let input = MlpInput::new(&parts.tau, parts.corr_in.view(), self.corrector_classes(class));
        let g_corr = self.corrector.input_vjp(self.params.as_slice(), &input, cot.view())?;
        let mut total = Array2::zeros((b, d));
        let mut via_denoiser = Array2::zeros((b, d));
        for (branch, g) in [(self.arch.predictor, g_pred), (self.arch.corrector, g_corr)] {
            match branch {
                BranchInput::Raw => total += &g,
                BranchInput::Denoised => via_denoiser += &g,
            }
        }
        if self.arch.needs_denoiser() {
            total += &self.through_denoiser(&parts, x, class, via_denoiser)?;
        }
        for i in 0..b {
            if parts.tau[i] == 0.0 {
                let (_, g) = self.reward.eval_grad(&x.row(i).to_vec(), Self::class_of(class, i))?;
                for j in 0..d {
                    total[[i, j]] = g[j];
                }
            }
        }
        Ok(total)
    }
}

impl<D: ScoreModel> Critic for ValueNet<D> {
    fn value_batch(&self, t: &[f64], x: ArrayView2<f64>, class: &[usize]) -> Result<Vec<f64>> {
        ValueNet::value_batch(self, t, x, class)
    }

    fn grad_x_batch(&self, t: &[f64], x: ArrayView2<f64>, class: &[usize]) -> Result<Array2<f64>> {
        ValueNet::grad_x_batch(self, t, x, class)
    }
}

/// Directional finite difference `(V(t, x + eta g^2 d) - V(t, x)) / eta`,
/// row by row.
pub fn advantage_rate<C: Critic + ?Sized>(
    critic: &C,
    schedule: &NoiseSchedule,
    t: &[f64],
    x: ArrayView2<f64>,
    class: &[usize],
    direction: ArrayView2<f64>,
    eta: f64,
) -> Result<Vec<f64>> {
    if !(eta > 0.0) {
        return Err(Error::InvalidParameter(format!("eta must be positive, got {eta}")));
    }
    let mut moved = x.to_owned();
    for (i, &ti) in t.iter().enumerate() {
        let g2 = schedule.g2_reverse(ti);
        for j in 0..x.ncols() {
            moved[[i, j]] += eta * g2 * direction[[i, j]];
        }
    }
    let v0 = critic.value_batch(t, x, class)?;
    let v1 = critic.value_batch(t, moved.view(), class)?;
    Ok(v0.iter().zip(&v1).map(|(a, b)| (b - a) / eta).collect())
}

/// `g^2(T - t) d . grad_x V`, row by row.
pub fn advantage_rate_backprop<C: Critic + ?Sized>(
    critic: &C,
    schedule: &NoiseSchedule,
    t: &[f64],
    x: ArrayView2<f64>,
    class: &[usize],
    direction: ArrayView2<f64>,
) -> Result<Vec<f64>> {
    let g = critic.grad_x_batch(t, x, class)?;
    Ok(t.iter()
        .enumerate()
        .map(|(i, &ti)| {
            let dot: f64 = (0..x.ncols()).map(|j| direction[[i, j]] * g[[i, j]]).sum();
            schedule.g2_reverse(ti) * dot
        })
        .collect())
}
