//! Single-step update rules for the controlled reverse SDE
//!
//! `dX_t = b(t, X_t, a_t) dt + g(T - t) dB_t`, with `b(t, x, a) = -f(T - t, x) + g^2(T - t) a`.
//!
//! Every function here takes reverse time and converts to the forward clock
//! internally, exactly once.

use crate::error::{Error, Result};
use crate::sde::NoiseSchedule;

/// Relative slack allowed when a step lands on the horizon.
const HORIZON_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SdeState {
    /// Reverse-process time in `[0, T]`.
    pub t: f64,
    pub x: Vec<f64>,
}

impl SdeState {
    pub fn new(t: f64, x: Vec<f64>) -> Self {
        Self { t, x }
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.x.iter().all(|v| v.is_finite())
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::ShapeMismatch { expected, got })
    }
}

fn advance_time(schedule: &NoiseSchedule, t: f64, dt: f64) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    let horizon = schedule.horizon;
    let next = t + dt;
    if next > horizon * (1.0 + HORIZON_SLACK) {
        return Err(Error::Overshoot { t, dt, horizon });
    }
    Ok(if (next - horizon).abs() <= horizon * HORIZON_SLACK {
        horizon
    } else {
        next
    })
}

/// Sample of the forward marginal: `alpha(t) x0 + sigma(t) eps` at forward time `t`.
pub fn forward_perturb(schedule: &NoiseSchedule, x0: &[f64], t: f64, eps: &[f64]) -> Result<Vec<f64>> {
    schedule.check_time(t)?;
    check_len(x0.len(), eps.len())?;
    let (a, s) = (schedule.alpha(t), schedule.sigma(t));
    Ok(x0.iter().zip(eps).map(|(x, e)| a * x + s * e).collect())
}

/// Controlled drift `b(t, x, a) = beta(T - t) x / 2 + beta(T - t) a`.
pub fn reverse_drift(schedule: &NoiseSchedule, t: f64, x: &[f64], a: &[f64]) -> Result<Vec<f64>> {
    schedule.check_time(t)?;
    check_len(x.len(), a.len())?;
    let beta = schedule.g2_reverse(t);
    Ok(x.iter().zip(a).map(|(x, a)| 0.5 * beta * x + beta * a).collect())
}

/// Euler–Maruyama step with standard-normal `noise`.
pub fn em_step(
    schedule: &NoiseSchedule,
    state: &SdeState,
    a: &[f64],
    dt: f64,
    noise: &[f64],
) -> Result<SdeState> {
    let t_next = advance_time(schedule, state.t, dt)?;
    check_len(state.x.len(), noise.len())?;
    let drift = reverse_drift(schedule, state.t, &state.x, a)?;
    let scale = (schedule.g2_reverse(state.t) * dt).sqrt();
    let x = state
        .x
        .iter()
        .zip(&drift)
        .zip(noise)
        .map(|((x, b), z)| x + b * dt + scale * z)
        .collect();
    Ok(SdeState { t: t_next, x })
}

/// Ancestral DDPM step with `beta_i = beta(T - t) dt`:
/// `x' = (x + beta_i s) / sqrt(1 - beta_i) + sqrt(beta_i) z`.
pub fn ddpm_step(
    schedule: &NoiseSchedule,
    state: &SdeState,
    score: &[f64],
    noise: &[f64],
    dt: f64,
) -> Result<SdeState> {
    let t_next = advance_time(schedule, state.t, dt)?;
    schedule.check_time(state.t)?;
    check_len(state.x.len(), score.len())?;
    check_len(state.x.len(), noise.len())?;
    let beta_i = ddpm_beta(schedule, state.t, dt)?;
    let inv = 1.0 / (1.0 - beta_i).sqrt();
    let sd = beta_i.sqrt();
    let x = state
        .x
        .iter()
        .zip(score)
        .zip(noise)
        .map(|((x, s), z)| (x + beta_i * s) * inv + sd * z)
        .collect();
    Ok(SdeState { t: t_next, x })
}

/// Discrete noise level of a DDPM step starting at reverse time `t`.
pub fn ddpm_beta(schedule: &NoiseSchedule, t: f64, dt: f64) -> Result<f64> {
    let beta_i = schedule.g2_reverse(t) * dt;
    if beta_i >= 1.0 {
        return Err(Error::InvalidParameter(format!(
            "DDPM step noise level beta_i = {beta_i} must be below 1"
        )));
    }
    Ok(beta_i)
}

/// Deterministic DDIM (exponential-integrator) step from reverse time
/// `state.t` to `t_next`, with `x_hat` the predicted clean sample:
/// `X_s = (sigma_s / sigma_t) [X_t - alpha_t x_hat] + alpha_s x_hat`.
pub fn ddim_step(schedule: &NoiseSchedule, state: &SdeState, x_hat: &[f64], t_next: f64) -> Result<SdeState> {
    schedule.check_time(state.t)?;
    schedule.check_time(t_next)?;
    check_len(state.x.len(), x_hat.len())?;
    if t_next < state.t {
        return Err(Error::InvalidParameter(format!(
            "DDIM step must move forward in reverse time ({} -> {t_next})",
            state.t
        )));
    }
    if t_next == state.t {
        return Ok(state.clone());
    }
    let (ft, fs) = (schedule.forward_time(state.t), schedule.forward_time(t_next));
    let sigma_t = schedule.sigma(ft);
    if sigma_t == 0.0 {
        return Err(Error::Singular("sigma_t = 0 at a non-terminal DDIM node"));
    }
    let ratio = schedule.sigma(fs) / sigma_t;
    let (alpha_t, alpha_s) = (schedule.alpha(ft), schedule.alpha(fs));
    let x = state
        .x
        .iter()
        .zip(x_hat)
        .map(|(x, xh)| ratio * (x - alpha_t * xh) + alpha_s * xh)
        .collect();
    Ok(SdeState { t: t_next, x })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sched() -> NoiseSchedule {
        NoiseSchedule::default()
    }

    #[test]
    fn forward_perturb_edge_cases() {
        let s = sched();
        let x0 = [0.3, -1.2];
        assert_eq!(forward_perturb(&s, &x0, 0.0, &[5.0, 7.0]).unwrap(), x0.to_vec());
        let out = forward_perturb(&s, &[0.0, 0.0], 0.4, &[1.0, -2.0]).unwrap();
        assert!((out[0] - s.sigma(0.4)).abs() < 1e-15);
        assert!((out[1] + 2.0 * s.sigma(0.4)).abs() < 1e-15);
        let end = forward_perturb(&s, &[1.0, 0.0], 1.0, &[0.0, 0.0]).unwrap();
        assert!((end[0] - (-5.025f64).exp()).abs() < 1e-15);
        assert!((end[0] - 6.57e-3).abs() < 1e-5);
        assert!(forward_perturb(&s, &x0, 1.01, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn drift_examples() {
        let s = sched();
        let t = 0.3;
        let beta = s.g2_reverse(t);
        let d = reverse_drift(&s, t, &[2.0, -1.0], &[0.0, 0.0]).unwrap();
        assert_eq!(d, vec![beta, -0.5 * beta]);
        let d = reverse_drift(&s, t, &[0.0], &[1.5]).unwrap();
        assert_eq!(d, vec![1.5 * beta]);
        let unit = NoiseSchedule::constant(1.0, 1.0).unwrap();
        let d = reverse_drift(&unit, 0.5, &[2.0, 0.0], &[-1.0, 0.0]).unwrap();
        assert_eq!(d, vec![0.0, 0.0]);
    }

    #[test]
    fn em_fixed_point_and_overshoot() {
        let s = sched();
        let st = SdeState::new(0.2, vec![0.0, 0.0]);
        let next = em_step(&s, &st, &[0.0, 0.0], 0.1, &[0.0, 0.0]).unwrap();
        assert_eq!(next.x, vec![0.0, 0.0]);
        assert!((next.t - 0.3).abs() < 1e-15);
        let late = SdeState::new(0.95, vec![0.0]);
        assert!(matches!(
            em_step(&s, &late, &[0.0], 0.1, &[0.0]),
            Err(Error::Overshoot { .. })
        ));
        let last = em_step(&s, &late, &[0.0], 0.05, &[0.0]).unwrap();
        assert_eq!(last.t, 1.0);
    }

    #[test]
    fn ddpm_rejects_large_noise_level() {
        let s = sched();
        // beta(T) = 20, so dt = 0.06 gives beta_i = 1.2
        let st = SdeState::new(0.0, vec![1.0]);
        assert!(ddpm_step(&s, &st, &[0.0], &[0.0], 0.06).is_err());
    }

    #[test]
    fn ddpm_vanishing_step() {
        let s = sched();
        let st = SdeState::new(0.5, vec![1.0, -2.0]);
        let next = ddpm_step(&s, &st, &[0.3, 0.1], &[0.0, 0.0], 1e-9).unwrap();
        for (a, b) in next.x.iter().zip(&st.x) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn ddpm_matches_em_to_second_order() {
        let s = sched();
        let st = SdeState::new(0.3, vec![0.7, -1.1]);
        let a = [0.4, 0.9];
        let z = [0.5, -1.5];
        let gap = |dt: f64| {
            let e = em_step(&s, &st, &a, dt, &z).unwrap();
            let d = ddpm_step(&s, &st, &a, &z, dt).unwrap();
            e.x.iter()
                .zip(&d.x)
                .map(|(p, q)| (p - q).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let dts: [f64; 3] = [1e-2, 1e-3, 1e-4];
        let pts: Vec<(f64, f64)> = dts.iter().map(|&d| (d.ln(), gap(d).ln())).collect();
        let slope = crate::stats::linear_fit(&pts).0;
        assert!(slope >= 1.9, "slope {slope}");
    }

    #[test]
    fn ddim_edge_cases() {
        let s = sched();
        let st = SdeState::new(0.4, vec![1.0, 2.0]);
        assert_eq!(ddim_step(&s, &st, &[0.1, 0.2], 0.4).unwrap(), st);
        let end = ddim_step(&s, &st, &[0.1, 0.2], 1.0).unwrap();
        assert_eq!(end.x, vec![0.1, 0.2]);
        let terminal = SdeState::new(1.0, vec![1.0]);
        assert!(ddim_step(&s, &terminal, &[0.0], 1.0).is_ok());
    }

    fn ddim_path(s: &NoiseSchedule, nodes: &[f64], x0: Vec<f64>, denoise: impl Fn(f64, &[f64]) -> Vec<f64>) -> Vec<f64> {
        let mut st = SdeState::new(nodes[0], x0);
        for &t in &nodes[1..] {
            let xh = denoise(st.t, &st.x);
            st = ddim_step(s, &st, &xh, t).unwrap();
        }
        st.x
    }

    #[test]
    fn ddim_inserting_nodes_is_exact_for_point_mass_data() {
        let s = sched();
        let m = [0.7, -1.3];
        let one = ddim_path(&s, &[0.1, 0.9], vec![0.4, 0.2], |_, _| m.to_vec());
        let many = ddim_path(&s, &[0.1, 0.25, 0.5, 0.6, 0.9], vec![0.4, 0.2], |_, _| m.to_vec());
        for (a, b) in one.iter().zip(&many) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn ddim_inserting_nodes_is_first_order_for_gaussian_data() {
        let s = sched();
        let (m, s2) = (1.0, 0.3);
        let denoise = |t: f64, x: &[f64]| {
            let tf = s.forward_time(t);
            let a = s.alpha(tf);
            let gain = a * s2 / (a * a * s2 + s.sigma2(tf));
            x.iter().map(|x| m + gain * (x - a * m)).collect()
        };
        let one = ddim_path(&s, &[0.1, 0.9], vec![0.4], denoise);
        let two = ddim_path(&s, &[0.1, 0.5, 0.9], vec![0.4], denoise);
        assert!((one[0] - two[0]).abs() > 1e-4);
    }
}
