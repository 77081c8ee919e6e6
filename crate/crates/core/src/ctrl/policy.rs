use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::score::{MeanField, ScoreNet};

/// A policy mean with trainable parameters and a parameter VJP.
pub trait TrainableMean: MeanField + Clone {
    fn param_values(&self) -> &[f64];

    fn param_values_mut(&mut self) -> &mut [f64];

    /// Accumulates `sum_i cot_i . d mean(t_i, x_i, c_i) / d theta` into `grad`.
    fn mean_param_vjp(
        &self,
        t: &[f64],
        x: ArrayView2<f64>,
        class: &[usize],
        cotangent: ArrayView2<f64>,
        grad: &mut [f64],
    ) -> Result<()>;

    fn n_params(&self) -> usize {
        self.param_values().len()
    }
}

impl TrainableMean for ScoreNet {
    fn param_values(&self) -> &[f64] {
        self.params().as_slice()
    }

    fn param_values_mut(&mut self) -> &mut [f64] {
        self.params_mut().as_mut_slice()
    }

    fn mean_param_vjp(
        &self,
        t: &[f64],
        x: ArrayView2<f64>,
        class: &[usize],
        cotangent: ArrayView2<f64>,
        grad: &mut [f64],
    ) -> Result<()> {
        ScoreNet::mean_param_vjp(self, t, x, class, cotangent, grad)
    }
}

/// `mu(t, x) = k x + b` with parameters `[k, b_1, ..., b_d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMean {
    pub params: Vec<f64>,
}

impl AffineMean {
    pub fn new(k: f64, b: Vec<f64>) -> Result<Self> {
        if b.is_empty() {
            return Err(Error::InvalidParameter("affine mean needs a dimension".into()));
        }
        let mut params = vec![k];
        params.extend(b);
        Ok(Self { params })
    }
}

impl MeanField for AffineMean {
    fn dim(&self) -> usize {
        self.params.len() - 1
    }

    fn mean_batch(&self, _t: &[f64], x: ArrayView2<f64>, _class: &[usize]) -> Result<Array2<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::ShapeMismatch {
                expected: self.dim(),
                got: x.ncols(),
            });
        }
        let k = self.params[0];
        Ok(Array2::from_shape_fn(x.raw_dim(), |(i, j)| k * x[[i, j]] + self.params[1 + j]))
    }
}

impl TrainableMean for AffineMean {
    fn param_values(&self) -> &[f64] {
        &self.params
    }

    fn param_values_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn mean_param_vjp(
        &self,
        _t: &[f64],
        x: ArrayView2<f64>,
        _class: &[usize],
        cotangent: ArrayView2<f64>,
        grad: &mut [f64],
    ) -> Result<()> {
        for i in 0..x.nrows() {
            for j in 0..x.ncols() {
                grad[0] += cotangent[[i, j]] * x[[i, j]];
                grad[1 + j] += cotangent[[i, j]];
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Mlp, MlpSpec};
    use crate::rng;

    fn check_vjp<P: TrainableMean>(p: &P, seed: u64) {
        let d = p.dim();
        let n = 6;
        let x = rng::normal_matrix(&mut rng::stream(seed, 0), n, d);
        let cot = rng::normal_matrix(&mut rng::stream(seed, 1), n, d);
        let t: Vec<f64> = (0..n).map(|i| 0.1 + 0.15 * i as f64).collect();
        let class = vec![0; n];
        let mut g = vec![0.0; p.n_params()];
        p.mean_param_vjp(&t, x.view(), &class, cot.view(), &mut g).unwrap();
        let f = |q: &P| -> f64 {
            let m = q.mean_batch(&t, x.view(), &class).unwrap();
            (&m * &cot).sum()
        };
        let h = 1e-6;
        for k in 0..p.n_params() {
            let mut up = p.clone();
            up.param_values_mut()[k] += h;
            let mut dn = p.clone();
            dn.param_values_mut()[k] -= h;
            let fd = (f(&up) - f(&dn)) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-6 * (1.0 + fd.abs()), "param {k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn affine_vjp() {
        check_vjp(&AffineMean::new(0.7, vec![0.2, -0.4]).unwrap(), 1);
    }

    #[test]
    fn score_net_vjp() {
        let spec = MlpSpec {
            hidden_dims: vec![6],
            ..MlpSpec::small(2, 2)
        };
        let mlp = Mlp::new(spec.clone()).unwrap();
        let net = ScoreNet::new(spec, mlp.init_params(&mut rng::stream(3, 0)), 1.0).unwrap();
        check_vjp(&net, 2);
    }
}
