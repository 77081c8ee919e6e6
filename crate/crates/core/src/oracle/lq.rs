//! One-dimensional linear-quadratic instance of the controlled reverse SDE.
//!
//! Dynamics `dX = (beta/2 X + beta a) dt + sqrt(beta) dB` with
//! `beta = beta(T - t)`, running reward `-(w/2) beta (a - k_ref x - l_ref)^2`,
//! terminal reward `-(h2/2) (x - x_star)^2`, and linear Gaussian policies
//! `a ~ N(k x + l, sigma^2)`.
//!
//! The discrete oracle lives on the learner's grid and uses the Euler
//! transition `x' = A x + B a + sqrt(beta dt) xi` with `A = 1 + beta dt / 2`
//! and `B = beta dt`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{ensure, Error, Result};
use crate::sde::{NoiseSchedule, TimeGrid};

#[derive(Debug, Clone)]
pub struct LqInstance {
    pub schedule: NoiseSchedule,
    pub grid: TimeGrid,
    pub w: f64,
    pub k_ref: f64,
    pub l_ref: f64,
    pub h2: f64,
    pub x_star: f64,
}

/// Piecewise-constant linear Gaussian policy, one gain pair per grid step.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPolicy {
    pub k: Vec<f64>,
    pub l: Vec<f64>,
    pub sigma: f64,
}

impl LinearPolicy {
    pub fn constant(n: usize, k: f64, l: f64, sigma: f64) -> Self {
        Self {
            k: vec![k; n],
            l: vec![l; n],
            sigma,
        }
    }

    pub fn mean(&self, i: usize, x: f64) -> f64 {
        self.k[i] * x + self.l[i]
    }
}

/// `V_i(x) = p_i x^2 + q_i x + r_i` at every node, `n + 1` entries each.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticValue {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub r: Vec<f64>,
}

impl QuadraticValue {
    pub fn eval(&self, i: usize, x: f64) -> f64 {
        self.p[i] * x * x + self.q[i] * x + self.r[i]
    }

    pub fn grad(&self, i: usize, x: f64) -> f64 {
        2.0 * self.p[i] * x + self.q[i]
    }

    /// Value averaged over `x ~ N(mean, var)`.
    pub fn expected(&self, i: usize, mean: f64, var: f64) -> f64 {
        self.p[i] * (var + mean * mean) + self.q[i] * mean + self.r[i]
    }
}

/// One sampled step of an LQ rollout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LqStep {
    pub x: f64,
    pub a: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LqPath {
    pub steps: Vec<LqStep>,
    pub terminal_state: f64,
    /// Sum of `r(t_i, x_i, a_i) dt_i` plus the terminal reward.
    pub total_reward: f64,
}

impl LqInstance {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        ensure(self.w >= 0.0 && self.h2 >= 0.0, || "LQ cost weights must be non-negative".into())?;
        ensure(self.grid.horizon() == self.schedule.horizon, || "LQ grid horizon mismatch".into())
    }

    pub fn n_steps(&self) -> usize {
        self.grid.n_steps()
    }

    fn beta_dt(&self, i: usize) -> (f64, f64) {
        let t = self.grid.nodes()[i];
        (self.schedule.g2_reverse(t), self.grid.dt(i))
    }

    pub fn running_reward(&self, i: usize, x: f64, a: f64) -> f64 {
        let (beta, _) = self.beta_dt(i);
        -0.5 * self.w * beta * (a - self.k_ref * x - self.l_ref).powi(2)
    }

    pub fn terminal_reward(&self, x: f64) -> f64 {
        -0.5 * self.h2 * (x - self.x_star).powi(2)
    }

    fn terminal_value(&self) -> (f64, f64, f64) {
        (-0.5 * self.h2, self.h2 * self.x_star, -0.5 * self.h2 * self.x_star * self.x_star)
    }

    fn check_policy(&self, pi: &LinearPolicy) -> Result<()> {
        if pi.k.len() != self.n_steps() || pi.l.len() != self.n_steps() {
            return Err(Error::ShapeMismatch {
                expected: self.n_steps(),
                got: pi.k.len(),
            });
        }
        Ok(())
    }

    /// Exact expected value of `pi` on the grid by backward recursion.
    pub fn evaluate(&self, pi: &LinearPolicy) -> Result<QuadraticValue> {
        self.check_policy(pi)?;
        let n = self.n_steps();
        let (mut p, mut q, mut r) = (vec![0.0; n + 1], vec![0.0; n + 1], vec![0.0; n + 1]);
        (p[n], q[n], r[n]) = self.terminal_value();
        let s2 = pi.sigma * pi.sigma;
        for i in (0..n).rev() {
            let (beta, dt) = self.beta_dt(i);
            let (a, b) = (1.0 + 0.5 * beta * dt, beta * dt);
            let c = self.w * beta * dt;
            let (k, l) = (pi.k[i], pi.l[i]);
            let f = a + b * k;
            let g = b * l;
            let (dk, dl) = (k - self.k_ref, l - self.l_ref);
            p[i] = p[i + 1] * f * f - 0.5 * c * dk * dk;
            q[i] = 2.0 * p[i + 1] * f * g + q[i + 1] * f - c * dk * dl;
            r[i] = p[i + 1] * (g * g + b * b * s2 + beta * dt) + q[i + 1] * g + r[i + 1] - 0.5 * c * (dl * dl + s2);
        }
        Ok(QuadraticValue { p, q, r })
    }

    /// Optimal linear gains on the grid (the optimal mean does not depend on
    /// the exploration level) and the value of the resulting policy.
    pub fn optimal(&self, sigma: f64) -> Result<(LinearPolicy, QuadraticValue)> {
        let n = self.n_steps();
        let (mut p_next, mut q_next, _) = self.terminal_value();
        let mut k = vec![0.0; n];
        let mut l = vec![0.0; n];
        for i in (0..n).rev() {
            let (beta, dt) = self.beta_dt(i);
            let (a, b) = (1.0 + 0.5 * beta * dt, beta * dt);
            let c = self.w * beta * dt;
            let den = c - 2.0 * p_next * b * b;
            if !(den > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "LQ instance is not concave in the action at step {i}"
                )));
            }
            k[i] = (c * self.k_ref + 2.0 * p_next * b * a) / den;
            l[i] = (c * self.l_ref + q_next * b) / den;
            let f = a + b * k[i];
            let g = b * l[i];
            let (dk, dl) = (k[i] - self.k_ref, l[i] - self.l_ref);
            let p_i = p_next * f * f - 0.5 * c * dk * dk;
            let q_i = 2.0 * p_next * f * g + q_next * f - c * dk * dl;
            p_next = p_i;
            q_next = q_i;
        }
        let pi = LinearPolicy { k, l, sigma };
        let v = self.evaluate(&pi)?;
        Ok((pi, v))
    }

    /// Discrete q-rate of `pi` at node `i`:
    /// `(r(x, a) dt + E[V_{i+1}(x') | x, a] - V_i(x)) / dt`.
    pub fn q_rate(&self, v: &QuadraticValue, i: usize, x: f64, a: f64) -> f64 {
        let (beta, dt) = self.beta_dt(i);
        let m = (1.0 + 0.5 * beta * dt) * x + beta * dt * a;
        let next = v.expected(i + 1, m, beta * dt);
        (self.running_reward(i, x, a) * dt + next - v.eval(i, x)) / dt
    }

    /// Samples a path under `pi` from `x0`.
    pub fn simulate<R: Rng + ?Sized>(&self, pi: &LinearPolicy, x0: f64, rng: &mut R) -> LqPath {
        let n = self.n_steps();
        let mut x = x0;
        let mut steps = Vec::with_capacity(n);
        let mut total = 0.0;
        for i in 0..n {
            let (beta, dt) = self.beta_dt(i);
            let mean = pi.mean(i, x);
            let z: f64 = rng.sample(StandardNormal);
            let a = mean + pi.sigma * z;
            total += self.running_reward(i, x, a) * dt;
            steps.push(LqStep { x, a, mean });
            let xi: f64 = rng.sample(StandardNormal);
            x = (1.0 + 0.5 * beta * dt) * x + beta * dt * a + (beta * dt).sqrt() * xi;
        }
        total += self.terminal_reward(x);
        LqPath {
            steps,
            terminal_state: x,
            total_reward: total,
        }
    }
}

/// Continuous-time value of a linear policy with gains `k(t), l(t)`,
/// obtained by integrating the quadratic-coefficient ODEs backward with RK4.
#[derive(Debug, Clone)]
pub struct ContinuousValue {
    pub times: Vec<f64>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub r: Vec<f64>,
}

impl LqInstance {
    pub fn continuous_value<K, L>(&self, k: K, l: L, sigma: f64, steps: usize) -> ContinuousValue
    where
        K: Fn(f64) -> f64,
        L: Fn(f64) -> f64,
    {
        let horizon = self.schedule.horizon;
        let rhs = |t: f64, y: [f64; 3]| -> [f64; 3] {
            let beta = self.schedule.g2_reverse(t);
            let (kt, lt) = (k(t), l(t));
            let (dk, dl) = (kt - self.k_ref, lt - self.l_ref);
            let drift = 0.5 * beta + beta * kt;
            // dV/dt = -E_a[H]
            [
                -(2.0 * y[0] * drift - 0.5 * self.w * beta * dk * dk),
                -(y[1] * drift + 2.0 * y[0] * beta * lt - self.w * beta * dk * dl),
                -(y[1] * beta * lt + y[0] * beta - 0.5 * self.w * beta * (dl * dl + sigma * sigma)),
            ]
        };
        let (p0, q0, r0) = self.terminal_value();
        let h = horizon / steps as f64;
        let mut y = [p0, q0, r0];
        let mut out = ContinuousValue {
            times: vec![horizon],
            p: vec![p0],
            q: vec![q0],
            r: vec![r0],
        };
        for s in 0..steps {
            let t = horizon - s as f64 * h;
            let add = |y: [f64; 3], d: [f64; 3], c: f64| [y[0] + c * d[0], y[1] + c * d[1], y[2] + c * d[2]];
            let k1 = rhs(t, y);
            let k2 = rhs(t - 0.5 * h, add(y, k1, -0.5 * h));
            let k3 = rhs(t - 0.5 * h, add(y, k2, -0.5 * h));
            let k4 = rhs(t - h, add(y, k3, -h));
            for j in 0..3 {
                y[j] -= h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            }
            out.times.push(t - h);
            out.p.push(y[0]);
            out.q.push(y[1]);
            out.r.push(y[2]);
        }
        out.times.reverse();
        out.p.reverse();
        out.q.reverse();
        out.r.reverse();
        out
    }
}

impl ContinuousValue {
    fn index(&self, t: f64) -> usize {
        let n = self.times.len() - 1;
        let h = self.times[n] / n as f64;
        ((t / h).round() as usize).min(n)
    }

    /// Coefficients `(p, q, r)` at the stored node nearest to `t`.
    pub fn coefficients(&self, t: f64) -> (f64, f64, f64) {
        let i = self.index(t);
        (self.p[i], self.q[i], self.r[i])
    }

    pub fn eval(&self, t: f64, x: f64) -> f64 {
        let (p, q, r) = self.coefficients(t);
        p * x * x + q * x + r
    }

    pub fn grad(&self, t: f64, x: f64) -> f64 {
        let (p, q, _) = self.coefficients(t);
        2.0 * p * x + q
    }
}

impl LqInstance {
    /// Continuous q-function `dV/dt + H(t, x, a, V_x, V_xx)` of the policy with
    /// mean `k x + l` at time `t`. Since `dV/dt = -E_a H`, this equals
    /// `beta (a - m) V_x + r(x, a) - E_a r(x, a)`.
    pub fn q_continuous(&self, v: &ContinuousValue, t: f64, x: f64, a: f64, k: f64, l: f64, sigma: f64) -> f64 {
        let beta = self.schedule.g2_reverse(t);
        let m = k * x + l;
        let r = |a: f64| -0.5 * self.w * beta * (a - self.k_ref * x - self.l_ref).powi(2);
        let r_mean = r(m) - 0.5 * self.w * beta * sigma * sigma;
        beta * (a - m) * v.grad(t, x) + r(a) - r_mean
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::stats::Estimate;

    fn instance(n: usize) -> LqInstance {
        LqInstance {
            schedule: NoiseSchedule::new(0.5, 2.0, 1.0).unwrap(),
            grid: TimeGrid::uniform(n, 1.0).unwrap(),
            w: 0.5,
            k_ref: -0.5,
            l_ref: 0.2,
            h2: 2.0,
            x_star: 1.0,
        }
    }

    #[test]
    fn evaluation_matches_monte_carlo() {
        let lq = instance(20);
        let pi = LinearPolicy::constant(20, -0.3, 0.1, 0.3);
        let v = lq.evaluate(&pi).unwrap();
        let mut r = rng::stream(4, 0);
        let totals: Vec<f64> = (0..20_000).map(|_| lq.simulate(&pi, 0.5, &mut r).total_reward).collect();
        let e = Estimate::from_samples(&totals);
        assert!((e.mean - v.eval(0, 0.5)).abs() < 3.0 * e.std_error, "{} vs {}", e.mean, v.eval(0, 0.5));
    }

    #[test]
    fn zero_cost_recursion_tracks_variance() {
        let mut lq = instance(50);
        lq.w = 0.0;
        lq.h2 = 2.0;
        lq.x_star = 0.0;
        let pi = LinearPolicy::constant(50, 0.0, 0.0, 0.0);
        let v = lq.evaluate(&pi).unwrap();
        // propagate the second moment forward through x' = A x + sqrt(beta dt) xi
        let (mut mean, mut var) = (0.3, 0.5);
        for i in 0..50 {
            let t = lq.grid.nodes()[i];
            let (beta, dt) = (lq.schedule.g2_reverse(t), lq.grid.dt(i));
            let a = 1.0 + 0.5 * beta * dt;
            mean *= a;
            var = a * a * var + beta * dt;
        }
        let expected = -(var + mean * mean);
        let got = v.expected(0, 0.3, 0.5);
        assert!((got - expected).abs() < 1e-12 * expected.abs());
    }

    #[test]
    fn deterministic_optimum_hits_target() {
        let mut lq = instance(1);
        lq.w = 1e-9;
        let (pi, _) = lq.optimal(0.0).unwrap();
        let beta = lq.schedule.g2_reverse(0.0);
        let x0 = 0.7;
        let x1 = (1.0 + 0.5 * beta) * x0 + beta * pi.mean(0, x0);
        assert!((x1 - lq.x_star).abs() < 1e-6, "{x1}");
    }

    #[test]
    fn optimal_beats_perturbations() {
        let lq = instance(10);
        let (pi, v) = lq.optimal(0.2).unwrap();
        for (dk, dl) in [(0.05, 0.0), (-0.05, 0.0), (0.0, 0.05), (0.0, -0.05)] {
            let mut alt = pi.clone();
            alt.k[3] += dk;
            alt.l[3] += dl;
            let va = lq.evaluate(&alt).unwrap();
            assert!(va.expected(0, 0.0, 1.0) < v.expected(0, 0.0, 1.0));
        }
    }

    #[test]
    fn refinement_changes_coefficients_little() {
        let pi = |n: usize| LinearPolicy::constant(n, -0.3, 0.1, 0.3);
        let v100 = instance(100).evaluate(&pi(100)).unwrap();
        let v400 = instance(400).evaluate(&pi(400)).unwrap();
        for (a, b) in [(v100.p[0], v400.p[0]), (v100.q[0], v400.q[0]), (v100.r[0], v400.r[0])] {
            assert!(((a - b) / b).abs() < 5e-3, "{a} vs {b}");
        }
    }

    #[test]
    fn discrete_q_is_maximized_by_optimal_mean() {
        let lq = instance(10);
        let (pi, v) = lq.optimal(0.2).unwrap();
        let (i, x) = (4, 0.8);
        let best = pi.mean(i, x);
        let q_best = lq.q_rate(&v, i, x, best);
        for d in [-0.1, -0.01, 0.01, 0.1] {
            assert!(lq.q_rate(&v, i, x, best + d) < q_best);
        }
    }

    #[test]
    fn q_along_own_policy_averages_to_zero() {
        let lq = instance(20);
        let pi = LinearPolicy::constant(20, -0.2, 0.3, 0.4);
        let v = lq.evaluate(&pi).unwrap();
        let mut r = rng::stream(9, 0);
        let sums: Vec<f64> = (0..5000)
            .map(|_| {
                let path = lq.simulate(&pi, 0.0, &mut r);
                path.steps
                    .iter()
                    .enumerate()
                    .map(|(i, s)| lq.q_rate(&v, i, s.x, s.a) * lq.grid.dt(i))
                    .sum()
            })
            .collect();
        let e = Estimate::from_samples(&sums);
        assert!(e.mean.abs() < 3.0 * e.std_error);
    }

    #[test]
    fn continuous_value_agrees_with_fine_grid() {
        let n = 2000;
        let lq = instance(n);
        let pi = LinearPolicy::constant(n, -0.3, 0.1, 0.3);
        let vd = lq.evaluate(&pi).unwrap();
        let vc = lq.continuous_value(|_| -0.3, |_| 0.1, 0.3, 2000);
        for (a, b) in [(vd.p[0], vc.p[0]), (vd.q[0], vc.q[0]), (vd.r[0], vc.r[0])] {
            assert!((a - b).abs() < 2e-3 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn continuous_q_properties() {
        let mut lq = instance(10);
        let vc = lq.continuous_value(|_| -0.3, |_| 0.1, 0.3, 500);
        // greedy action is k_ref x + l_ref + V_x / w
        let (t, x) = (0.4, 0.6);
        let greedy = lq.k_ref * x + lq.l_ref + vc.grad(t, x) / lq.w;
        let q0 = lq.q_continuous(&vc, t, x, greedy, -0.3, 0.1, 0.3);
        for d in [-0.1, 0.1] {
            assert!(lq.q_continuous(&vc, t, x, greedy + d, -0.3, 0.1, 0.3) < q0);
        }
        // constant-in-x value: q reduces to r - E r
        lq.h2 = 0.0;
        let flat = lq.continuous_value(|_| lq.k_ref, |_| lq.l_ref, 0.3, 100);
        let beta = lq.schedule.g2_reverse(t);
        let a = 0.9;
        let m = lq.k_ref * x + lq.l_ref;
        let q = lq.q_continuous(&flat, t, x, a, lq.k_ref, lq.l_ref, 0.3);
        let expected = -0.5 * lq.w * beta * ((a - m).powi(2) - 0.09);
        assert!((q - expected).abs() < 1e-12);
    }
}
