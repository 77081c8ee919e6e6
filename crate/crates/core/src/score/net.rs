use ndarray::{Array2, ArrayView2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Checkpoint, Mlp, MlpInput, MlpSpec, ParamVector, Role};
use crate::score::MeanField;
use crate::sde::NoiseSchedule;

/// Score network `s(t_forward, x, class)`.
///
/// As a [`MeanField`] it is read on the reverse clock: the policy mean at
/// reverse time `t` is the score at forward time `T - t`.
#[derive(Debug, Clone)]
pub struct ScoreNet {
    mlp: Mlp,
    params: ParamVector,
    horizon: f64,
}

impl ScoreNet {
    pub fn new(spec: MlpSpec, params: ParamVector, horizon: f64) -> Result<Self> {
        let mlp = Mlp::new(spec)?;
        if params.len() != mlp.n_params() {
            return Err(Error::ShapeMismatch {
                expected: mlp.n_params(),
                got: params.len(),
            });
        }
        if mlp.spec().input_dim != mlp.spec().output_dim {
            return Err(Error::InvalidParameter(
                "score network must map R^d to R^d".into(),
            ));
        }
        Ok(Self { mlp, params, horizon })
    }

    pub fn init<R: Rng + ?Sized>(spec: MlpSpec, horizon: f64, rng: &mut R) -> Result<Self> {
        let mlp = Mlp::new(spec.clone())?;
        let mut params = mlp.init_params(rng);
        mlp.zero_final_layer(params.as_mut_slice());
        Self::new(spec, params, horizon)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, horizon: f64) -> Result<Self> {
        Self::new(ckpt.spec.clone(), ckpt.params.clone(), horizon)
    }

    pub fn to_checkpoint(&self, role: Role) -> Checkpoint {
        Checkpoint::new(role, self.mlp.spec().clone(), &self.params)
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn spec(&self) -> &MlpSpec {
        self.mlp.spec()
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    pub fn set_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::ShapeMismatch {
                expected: self.params.len(),
                got: values.len(),
            });
        }
        self.params.as_mut_slice().copy_from_slice(values);
        Ok(())
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dim(&self) -> usize {
        self.mlp.spec().input_dim
    }

    fn classes<'a>(&self, class: &'a [usize]) -> &'a [usize] {
        if self.mlp.spec().context_dim > 0 {
            class
        } else {
            &[]
        }
    }

    pub fn score_batch(&self, t_forward: &[f64], x: ArrayView2<f64>, class: &[usize]) -> Result<Array2<f64>> {
        let input = MlpInput::new(t_forward, x.view(), self.classes(class));
        self.mlp.forward_batch(self.params.as_slice(), &input)
    }

    pub fn score(&self, t_forward: f64, x: &[f64], class: usize) -> Result<Vec<f64>> {
        self.mlp.forward(self.params.as_slice(), t_forward, x, class)
    }

    fn forward_times(&self, t_reverse: &[f64]) -> Vec<f64> {
        t_reverse.iter().map(|t| (self.horizon - t).max(0.0)).collect()
    }

    /// Accumulates `sum_i cot_i . d mean(t_i, x_i) / d params` into `grad`
    /// (reverse-clock times).
    pub fn mean_param_vjp(
        &self,
        t_reverse: &[f64],
        x: ArrayView2<f64>,
        class: &[usize],
        cotangent: ArrayView2<f64>,
        grad: &mut [f64],
    ) -> Result<()> {
        let tf = self.forward_times(t_reverse);
        self.score_param_vjp(&tf, x, class, cotangent, grad)
    }

    /// Forward-clock version of [`ScoreNet::mean_param_vjp`].
    pub fn score_param_vjp(
        &self,
        t_forward: &[f64],
        x: ArrayView2<f64>,
        class: &[usize],
        cotangent: ArrayView2<f64>,
        grad: &mut [f64],
    ) -> Result<()> {
        let input = MlpInput::new(t_forward, x.view(), self.classes(class));
        let tape = self.mlp.forward_tape(self.params.as_slice(), &input)?;
        self.mlp.backward(self.params.as_slice(), &tape, cotangent, Some(grad));
        Ok(())
    }

    /// Row-wise `cot_i^T d s(t_i, x_i) / d x` on the forward clock.
    pub fn score_input_vjp(
        &self,
        t_forward: &[f64],
        x: ArrayView2<f64>,
        class: &[usize],
        cotangent: ArrayView2<f64>,
    ) -> Result<Array2<f64>> {
        let input = MlpInput::new(t_forward, x.view(), self.classes(class));
        self.mlp.input_vjp(self.params.as_slice(), &input, cotangent)
    }
}

impl MeanField for ScoreNet {
    fn dim(&self) -> usize {
        ScoreNet::dim(self)
    }

    fn mean_batch(&self, t: &[f64], x: ArrayView2<f64>, class: &[usize]) -> Result<Array2<f64>> {
        let tf = self.forward_times(t);
        self.score_batch(&tf, x, class)
    }
}

/// Tweedie posterior-mean prediction `(sigma^2 s + x) / alpha` at reverse time `t`.
pub fn tweedie_denoise(schedule: &NoiseSchedule, net: &ScoreNet, t_reverse: f64, x: &[f64], class: usize) -> Result<Vec<f64>> {
    schedule.check_time(t_reverse)?;
    let tf = schedule.forward_time(t_reverse);
    let s = net.score(tf, x, class)?;
    tweedie_from_score(schedule, t_reverse, x, &s)
}

/// Tweedie prediction from a precomputed score value.
pub fn tweedie_from_score(schedule: &NoiseSchedule, t_reverse: f64, x: &[f64], score: &[f64]) -> Result<Vec<f64>> {
    let tf = schedule.forward_time(t_reverse);
    let alpha = schedule.alpha(tf);
    if alpha == 0.0 {
        return Err(Error::Singular("alpha = 0 in Tweedie prediction"));
    }
    let s2 = schedule.sigma2(tf);
    Ok(x.iter().zip(score).map(|(x, s)| (s2 * s + x) / alpha).collect())
}

/// Row-wise Tweedie prediction for per-row reverse times.
pub fn tweedie_batch(schedule: &NoiseSchedule, t_reverse: &[f64], x: ArrayView2<f64>, score: ArrayView2<f64>) -> Array2<f64> {
    let mut out = x.to_owned();
    for (i, &t) in t_reverse.iter().enumerate() {
        let tf = schedule.forward_time(t);
        let (alpha, s2) = (schedule.alpha(tf), schedule.sigma2(tf));
        for j in 0..x.ncols() {
            out[[i, j]] = (s2 * score[[i, j]] + x[[i, j]]) / alpha;
        }
    }
    out
}
