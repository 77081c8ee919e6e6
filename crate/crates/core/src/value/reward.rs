use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Shape of the terminal reward before clamping to `[-bound, bound]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RewardKind {
    /// `-scale |x - target|^2`.
    TargetDistance { target: Vec<f64>, scale: f64 },
    /// `-scale |x - targets[c]|^2`, one target per class.
    ClassTargets { targets: Vec<Vec<f64>>, scale: f64 },
    /// `M (2 sigmoid(k ((w . x)^2 - b)) - 1)`; even in `x`.
    ModeLogistic { direction: Vec<f64>, steepness: f64, offset: f64 },
    /// `w . x + b`.
    Linear { weights: Vec<f64>, bias: f64 },
}

/// Deterministic terminal reward with `|RM| <= bound`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardModel {
    pub shape: RewardKind,
    pub bound: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl RewardModel {
    pub fn new(kind: RewardKind, bound: f64) -> Result<Self> {
        let rm = Self { shape: kind, bound };
        rm.validate()?;
        Ok(rm)
    }

    pub fn target_distance(target: Vec<f64>, bound: f64) -> Result<Self> {
        Self::new(RewardKind::TargetDistance { target, scale: 1.0 }, bound)
    }

    pub fn linear(weights: Vec<f64>, bias: f64, bound: f64) -> Result<Self> {
        Self::new(RewardKind::Linear { weights, bias }, bound)
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.bound > 0.0 && self.bound.is_finite(), || {
            format!("reward bound must be positive and finite, got {}", self.bound)
        })?;
        match &self.shape {
            RewardKind::TargetDistance { target, scale } => {
                ensure(!target.is_empty() && *scale > 0.0, || "target reward needs a target and positive scale".into())
            }
            RewardKind::ClassTargets { targets, scale } => ensure(
                !targets.is_empty() && targets.iter().all(|t| t.len() == targets[0].len()) && *scale > 0.0,
                || "class targets must be non-empty and share a dimension".into(),
            ),
            RewardKind::ModeLogistic { direction, steepness, .. } => {
                ensure(!direction.is_empty() && *steepness > 0.0, || "logistic reward needs a direction and positive steepness".into())
            }
            RewardKind::Linear { weights, .. } => ensure(!weights.is_empty(), || "linear reward needs weights".into()),
        }
    }

    pub fn dim(&self) -> usize {
        match &self.shape {
            RewardKind::TargetDistance { target, .. } => target.len(),
            RewardKind::ClassTargets { targets, .. } => targets[0].len(),
            RewardKind::ModeLogistic { direction, .. } => direction.len(),
            RewardKind::Linear { weights, .. } => weights.len(),
        }
    }

    fn check(&self, x: &[f64], c: usize) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::ShapeMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        if let RewardKind::ClassTargets { targets, .. } = &self.shape {
            if c >= targets.len() {
                return Err(Error::InvalidParameter(format!("class {c} has no target")));
            }
        }
        Ok(())
    }

    /// Unclamped value and gradient.
    fn raw(&self, x: &[f64], c: usize) -> (f64, Vec<f64>) {
        let dist = |t: &[f64], s: f64| {
            let v = -s * x.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let g = x.iter().zip(t).map(|(a, b)| -2.0 * s * (a - b)).collect();
            (v, g)
        };
        match &self.shape {
            RewardKind::TargetDistance { target, scale } => dist(target, *scale),
            RewardKind::ClassTargets { targets, scale } => dist(&targets[c], *scale),
            RewardKind::ModeLogistic {
                direction,
                steepness,
                offset,
            } => {
                let p: f64 = x.iter().zip(direction).map(|(a, b)| a * b).sum();
                let z = steepness * (p * p - offset);
                let s = sigmoid(z);
                let v = self.bound * (2.0 * s - 1.0);
                let dv = self.bound * 2.0 * s * (1.0 - s) * steepness * 2.0 * p;
                (v, direction.iter().map(|d| dv * d).collect())
            }
            RewardKind::Linear { weights, bias } => {
                (x.iter().zip(weights).map(|(a, b)| a * b).sum::<f64>() + bias, weights.clone())
            }
        }
    }

    /// `RM(x, c)`, clamped to `[-bound, bound]`.
    pub fn eval(&self, x: &[f64], c: usize) -> Result<f64> {
        self.check(x, c)?;
        Ok(self.raw(x, c).0.clamp(-self.bound, self.bound))
    }

    /// Value and gradient in `x`; the gradient vanishes where the clamp is active.
    pub fn eval_grad(&self, x: &[f64], c: usize) -> Result<(f64, Vec<f64>)> {
        self.check(x, c)?;
        let (v, g) = self.raw(x, c);
        if v.abs() > self.bound {
            Ok((v.clamp(-self.bound, self.bound), vec![0.0; x.len()]))
        } else {
            Ok((v, g))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn target_distance_peaks_at_target() {
        let rm = RewardModel::target_distance(vec![1.5, 0.5], 10.0).unwrap();
        assert_eq!(rm.eval(&[1.5, 0.5], 0).unwrap(), 0.0);
        assert!(rm.eval(&[1.4, 0.5], 0).unwrap() < 0.0);
    }

    #[test]
    fn logistic_reward_is_even() {
        let rm = RewardModel::new(
            RewardKind::ModeLogistic {
                direction: vec![1.0, 0.3],
                steepness: 2.0,
                offset: 1.0,
            },
            1.0,
        )
        .unwrap();
        for x in [[0.3, -0.8], [1.7, 0.2], [-2.0, 4.0]] {
            let neg = [-x[0], -x[1]];
            assert_eq!(rm.eval(&x, 0).unwrap(), rm.eval(&neg, 0).unwrap());
        }
    }

    #[test]
    fn clamps_to_bound() {
        let rm = RewardModel::target_distance(vec![0.0, 0.0], 2.0).unwrap();
        assert_eq!(rm.eval(&[10.0, 0.0], 0).unwrap(), -2.0);
        let (_, g) = rm.eval_grad(&[10.0, 0.0], 0).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
        let lin = RewardModel::linear(vec![1.0], 0.0, 3.0).unwrap();
        assert_eq!(lin.eval(&[5.0], 0).unwrap(), 3.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let models = [
            RewardModel::target_distance(vec![1.0, -0.5], 100.0).unwrap(),
            RewardModel::new(
                RewardKind::ModeLogistic {
                    direction: vec![1.0, 0.3],
                    steepness: 2.0,
                    offset: 1.0,
                },
                1.5,
            )
            .unwrap(),
            RewardModel::new(
                RewardKind::ClassTargets {
                    targets: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
                    scale: 0.5,
                },
                100.0,
            )
            .unwrap(),
        ];
        let h = 1e-6;
        for rm in &models {
            let x = [0.4, 0.9];
            let (_, g) = rm.eval_grad(&x, 1.min(rm.dim())).unwrap();
            for j in 0..2 {
                let mut up = x;
                up[j] += h;
                let mut dn = x;
                dn[j] -= h;
                let c = 1.min(rm.dim());
                let fd = (rm.eval(&up, c).unwrap() - rm.eval(&dn, c).unwrap()) / (2.0 * h);
                assert!((fd - g[j]).abs() < 1e-6, "{fd} vs {}", g[j]);
            }
        }
    }

    #[test]
    fn config_round_trip() {
        let rm = RewardModel::target_distance(vec![1.5, 0.5], 10.0).unwrap();
        let s = serde_json::to_string(&rm).unwrap();
        assert_eq!(serde_json::from_str::<RewardModel>(&s).unwrap(), rm);
    }
}
