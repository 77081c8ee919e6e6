use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::oracle::{pf_ode_exact, GaussianMixtureData};
use crate::sde::{ddim_step, ddpm_step, em_step, NoiseSchedule, SdeState, TimeGrid};
use crate::stats::log_log_slope;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeReport {
    pub abscissa: Vec<f64>,
    pub errors: Vec<f64>,
    pub slope: f64,
}

/// Gap between one ancestral DDPM step and one Euler–Maruyama step with the
/// same score and noise, across step sizes.
pub fn ddpm_euler_gap(schedule: &NoiseSchedule, dts: &[f64]) -> Result<SlopeReport> {
    let st = SdeState::new(0.3 * schedule.horizon, vec![0.7, -1.1]);
    let a = [0.4, 0.9];
    let z = [0.5, -1.5];
    let mut errors = Vec::with_capacity(dts.len());
    for &dt in dts {
        let e = em_step(schedule, &st, &a, dt, &z)?;
        let d = ddpm_step(schedule, &st, &a, &z, dt)?;
        errors.push(e.x.iter().zip(&d.x).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt());
    }
    Ok(SlopeReport {
        abscissa: dts.to_vec(),
        slope: log_log_slope(dts, &errors),
        errors,
    })
}

/// Endpoint error of DDIM with the exact Gaussian denoiser against the exact
/// probability-flow map, averaged over a few starting points.
pub fn ddim_endpoint_error(schedule: &NoiseSchedule, step_counts: &[usize]) -> Result<SlopeReport> {
    let (m, s2) = (vec![1.0, -0.5], 0.3);
    let data = GaussianMixtureData::gaussian(m.clone(), s2)?;
    let starts = [[0.8, -0.4], [-1.2, 0.3], [0.1, 1.5]];
    let horizon = schedule.horizon;
    let mut errors = Vec::with_capacity(step_counts.len());
    for &n in step_counts {
        let grid = TimeGrid::uniform(n, horizon)?;
        let mut total = 0.0;
        for x0 in &starts {
            let mut st = SdeState::new(0.0, x0.to_vec());
            for i in 0..n {
                let tf = schedule.forward_time(st.t);
                let xh = data.posterior_mean(schedule, tf, &st.x);
                st = ddim_step(schedule, &st, &xh, grid.nodes()[i + 1])?;
            }
            let exact = pf_ode_exact(schedule, &m, s2, x0, horizon, 0.0);
            total += st.x.iter().zip(&exact).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        }
        errors.push(total / starts.len() as f64);
    }
    let ns: Vec<f64> = step_counts.iter().map(|&n| n as f64).collect();
    Ok(SlopeReport {
        slope: log_log_slope(&ns, &errors),
        abscissa: ns,
        errors,
    })
}
