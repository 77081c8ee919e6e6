use ndarray::{Array2, ArrayView2};

use crate::error::Result;
use crate::score::ScoreNet;

/// A score function on the forward clock with input vector-Jacobian products,
/// as needed by the denoised-sample predictor.
pub trait ScoreModel: Send + Sync {
    fn dim(&self) -> usize;

    fn score_batch(&self, t_forward: &[f64], x: ArrayView2<f64>, class: &[usize]) -> Result<Array2<f64>>;

    /// Row-wise `cot_i^T d s(t_i, x_i) / d x`.
    fn score_input_vjp(
        &self,
        t_forward: &[f64],
        x: ArrayView2<f64>,
        class: &[usize],
        cotangent: ArrayView2<f64>,
    ) -> Result<Array2<f64>>;

    /// The network behind the score, when its parameters can be trained.
    fn network(&self) -> Option<&ScoreNet> {
        None
    }

    fn network_mut(&mut self) -> Option<&mut ScoreNet> {
        None
    }
}

impl ScoreModel for ScoreNet {
    fn dim(&self) -> usize {
        ScoreNet::dim(self)
    }

    fn score_batch(&self, t_forward: &[f64], x: ArrayView2<f64>, class: &[usize]) -> Result<Array2<f64>> {
        ScoreNet::score_batch(self, t_forward, x, class)
    }

    fn score_input_vjp(
        &self,
        t_forward: &[f64],
        x: ArrayView2<f64>,
        class: &[usize],
        cotangent: ArrayView2<f64>,
    ) -> Result<Array2<f64>> {
        ScoreNet::score_input_vjp(self, t_forward, x, class, cotangent)
    }

    fn network(&self) -> Option<&ScoreNet> {
        Some(self)
    }

    fn network_mut(&mut self) -> Option<&mut ScoreNet> {
        Some(self)
    }
}
