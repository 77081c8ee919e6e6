use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum OptimizerKind {
    Sgd,
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

/// First-order optimizer. `step` performs descent; callers maximizing an
/// objective pass the negated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, n_params: usize) -> Self {
        let moments = match kind {
            OptimizerKind::Sgd => 0,
            OptimizerKind::Adam { .. } => n_params,
        };
        Self {
            kind,
            lr,
            m: vec![0.0; moments],
            v: vec![0.0; moments],
            steps: 0,
        }
    }

    pub fn adam(lr: f64, n_params: usize) -> Self {
        Self::new(OptimizerKind::default(), lr, n_params)
    }

    pub fn sgd(lr: f64) -> Self {
        Self::new(OptimizerKind::Sgd, lr, 0)
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != grad.len() {
            return Err(Error::ShapeMismatch {
                expected: params.len(),
                got: grad.len(),
            });
        }
        self.steps += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                if self.lr != 0.0 {
                    for (p, g) in params.iter_mut().zip(grad) {
                        *p -= self.lr * g;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                if self.m.len() != params.len() {
                    return Err(Error::ShapeMismatch {
                        expected: self.m.len(),
                        got: params.len(),
                    });
                }
                let bc1 = 1.0 - beta1.powi(self.steps as i32);
                let bc2 = 1.0 - beta2.powi(self.steps as i32);
                for i in 0..params.len() {
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * grad[i];
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * grad[i] * grad[i];
                    if self.lr != 0.0 {
                        let mh = self.m[i] / bc1;
                        let vh = self.v[i] / bc2;
                        params[i] -= self.lr * mh / (vh.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }

    /// Moment buffers and step count, for exact resumption.
    pub fn state(&self) -> (&[f64], &[f64], u64) {
        (&self.m, &self.v, self.steps)
    }

    pub fn restore(&mut self, m: Vec<f64>, v: Vec<f64>, steps: u64) -> Result<()> {
        if m.len() != self.m.len() || v.len() != self.v.len() {
            return Err(Error::ShapeMismatch {
                expected: self.m.len(),
                got: m.len(),
            });
        }
        self.m = m;
        self.v = v;
        self.steps = steps;
        Ok(())
    }
}
