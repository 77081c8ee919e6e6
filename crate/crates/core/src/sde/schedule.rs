use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Variance-preserving noise schedule with a linear rate
/// `beta(t) = beta_min + (beta_max - beta_min) t / T`.
///
/// All accessors take the *forward* diffusion time unless their name ends in
/// `_reverse`. Reverse-process time `t` maps to forward time `T - t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSchedule {
    pub beta_min: f64,
    pub beta_max: f64,
    pub horizon: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self {
            beta_min: 0.1,
            beta_max: 20.0,
            horizon: 1.0,
        }
    }
}

impl NoiseSchedule {
    pub fn new(beta_min: f64, beta_max: f64, horizon: f64) -> Result<Self> {
        let s = Self {
            beta_min,
            beta_max,
            horizon,
        };
        s.validate()?;
        Ok(s)
    }

    /// Constant rate `beta(t) = gamma`.
    pub fn constant(gamma: f64, horizon: f64) -> Result<Self> {
        Self::new(gamma, gamma, horizon)
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.horizon.is_finite() && self.horizon > 0.0, || {
            format!("horizon must be positive, got {}", self.horizon)
        })?;
        ensure(
            self.beta_min.is_finite() && self.beta_max.is_finite(),
            || "beta bounds must be finite".into(),
        )?;
        ensure(self.beta_min > 0.0 && self.beta_max > 0.0, || {
            format!(
                "beta must be positive on [0,T], got [{}, {}]",
                self.beta_min, self.beta_max
            )
        })
    }

    pub fn check_time(&self, t: f64) -> Result<()> {
        if (0.0..=self.horizon).contains(&t) {
            Ok(())
        } else {
            Err(Error::TimeOutOfRange {
                t,
                horizon: self.horizon,
            })
        }
    }

    #[inline]
    pub fn beta(&self, t: f64) -> f64 {
        self.beta_min + (self.beta_max - self.beta_min) * t / self.horizon
    }

    /// Closed-form `\int_0^t beta(s) ds`.
    #[inline]
    pub fn beta_integral(&self, t: f64) -> f64 {
        self.beta_min * t + 0.5 * (self.beta_max - self.beta_min) * t * t / self.horizon
    }

    #[inline]
    pub fn alpha(&self, t: f64) -> f64 {
        (-0.5 * self.beta_integral(t)).exp()
    }

    /// `1 - alpha(t)^2`, computed without cancellation near `t = 0`.
    #[inline]
    pub fn sigma2(&self, t: f64) -> f64 {
        -(-self.beta_integral(t)).exp_m1()
    }

    #[inline]
    pub fn sigma(&self, t: f64) -> f64 {
        self.sigma2(t).sqrt()
    }

    /// Forward drift coefficient: `f(t, x) = -beta(t) x / 2`.
    #[inline]
    pub fn drift_coeff(&self, t: f64) -> f64 {
        -0.5 * self.beta(t)
    }

    /// Diffusion coefficient `g(t) = sqrt(beta(t))`.
    #[inline]
    pub fn diffusion(&self, t: f64) -> f64 {
        self.beta(t).sqrt()
    }

    #[inline]
    pub fn forward_time(&self, t_reverse: f64) -> f64 {
        (self.horizon - t_reverse).max(0.0)
    }

    /// `g^2(T - t)` for reverse time `t`.
    #[inline]
    pub fn g2_reverse(&self, t_reverse: f64) -> f64 {
        self.beta(self.forward_time(t_reverse))
    }
}

/// Ordered time nodes `0 = t_0 < ... < t_n = T` on the reverse clock.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    nodes: Vec<f64>,
}

impl TimeGrid {
    pub fn uniform(n_steps: usize, horizon: f64) -> Result<Self> {
        ensure(n_steps > 0, || "grid needs at least one step".into())?;
        ensure(horizon > 0.0, || "horizon must be positive".into())?;
        let mut nodes: Vec<f64> = (0..=n_steps)
            .map(|i| horizon * i as f64 / n_steps as f64)
            .collect();
        nodes[n_steps] = horizon;
        Ok(Self { nodes })
    }

    pub fn from_nodes(nodes: Vec<f64>, horizon: f64) -> Result<Self> {
        ensure(nodes.len() >= 2, || "grid needs at least two nodes".into())?;
        ensure(nodes[0] == 0.0, || format!("first node must be 0, got {}", nodes[0]))?;
        ensure(*nodes.last().unwrap() == horizon, || {
            format!("last node must equal horizon {horizon}")
        })?;
        ensure(nodes.windows(2).all(|w| w[1] > w[0]), || {
            "grid nodes must be strictly increasing".into()
        })?;
        Ok(Self { nodes })
    }

    pub fn n_steps(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn horizon(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    pub fn dt(&self, i: usize) -> f64 {
        self.nodes[i + 1] - self.nodes[i]
    }

    /// Grid with each cell split into `factor` equal parts.
    pub fn refine(&self, factor: usize) -> Self {
        let mut nodes = Vec::with_capacity(self.n_steps() * factor + 1);
        for w in self.nodes.windows(2) {
            for k in 0..factor {
                nodes.push(w[0] + (w[1] - w[0]) * k as f64 / factor as f64);
            }
        }
        nodes.push(self.horizon());
        Self { nodes }
    }
}
