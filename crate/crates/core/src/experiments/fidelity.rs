use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::oracle::GaussianMixtureData;
use crate::score::ScoreModel;
use crate::sde::NoiseSchedule;

/// Forward times at which the learned score is compared with the analytic one.
pub const FIDELITY_TIMES: [f64; 5] = [0.2, 0.4, 0.6, 0.8, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceError {
    pub t: f64,
    pub rel_l2: f64,
}

/// Density-weighted relative L2 error of `model` against the mixture score on
/// a `grid x grid` square covering three marginal standard deviations past
/// the outermost component.
pub fn score_fidelity<S: ScoreModel + ?Sized>(
    schedule: &NoiseSchedule,
    data: &GaussianMixtureData,
    model: &S,
    times: &[f64],
    grid: usize,
) -> Result<Vec<SliceError>> {
    let d = data.dim();
    let reach = data.means.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        schedule.check_time(t)?;
        let half = schedule.alpha(t) * reach + 3.0 * data.marginal_variance(schedule, t).sqrt();
        let n = grid.pow(d as u32);
        let mut x = Array2::zeros((n, d));
        for i in 0..n {
            let mut rest = i;
            for j in 0..d {
                let k = rest % grid;
                rest /= grid;
                x[[i, j]] = -half + 2.0 * half * k as f64 / (grid - 1).max(1) as f64;
            }
        }
        let pred = model.score_batch(&vec![t; n], x.view(), &[])?;
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..n {
            let xi = x.row(i).to_vec();
            let w = data.log_density(schedule, t, &xi).exp();
            let s = data.score(schedule, t, &xi);
            for j in 0..d {
                num += w * (pred[[i, j]] - s[j]).powi(2);
                den += w * s[j] * s[j];
            }
        }
        out.push(SliceError { t, rel_l2: (num / den).sqrt() });
    }
    Ok(out)
}
