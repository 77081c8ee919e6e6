use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::nn::{Mlp, MlpInput};
use crate::rng;

/// Outcome of a directional finite-difference check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub name: String,
    pub directions: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub directions: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Directional derivatives below this magnitude are compared absolutely.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            directions: 100,
            step: 1e-4,
            tolerance: 1e-3,
            floor: 1e-6,
            seed: 0,
        }
    }
}

/// Compares `grad . u` with `(f(p + h u) - f(p - h u)) / 2h` along random unit
/// directions `u`.
pub fn check_directional<F>(name: &str, point: &[f64], grad: &[f64], cfg: &GradCheckConfig, mut f: F) -> Result<GradCheck>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    ensure(point.len() == grad.len() && !point.is_empty(), || {
        format!("{name}: point and gradient lengths differ or are empty")
    })?;
    let mut r = rng::stream(cfg.seed, 0);
    let mut worst = 0.0f64;
    for _ in 0..cfg.directions {
        let mut u = rng::normals(&mut r, point.len());
        let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        u.iter_mut().for_each(|v| *v /= norm);
        let shifted = |sign: f64| -> Vec<f64> { point.iter().zip(&u).map(|(p, d)| p + sign * cfg.step * d).collect() };
        let fd = (f(&shifted(1.0))? - f(&shifted(-1.0))?) / (2.0 * cfg.step);
        let an: f64 = grad.iter().zip(&u).map(|(g, d)| g * d).sum();
        let err = (fd - an).abs() / fd.abs().max(an.abs()).max(cfg.floor);
        worst = worst.max(err);
    }
    Ok(GradCheck {
        name: name.to_string(),
        directions: cfg.directions,
        max_rel_error: worst,
        tolerance: cfg.tolerance,
    })
}

/// Checks `vjp(cot) = d (sum cot * f(p)) / dp` at `point` for a random
/// cotangent shaped like `f(point)`.
pub fn check_vjp<F, V>(name: &str, point: &[f64], cfg: &GradCheckConfig, f: F, vjp: V) -> Result<GradCheck>
where
    F: Fn(&[f64]) -> Result<Array2<f64>>,
    V: FnOnce(ArrayView2<f64>) -> Result<Vec<f64>>,
{
    let out = f(point)?;
    let mut r = rng::stream(cfg.seed, 2);
    let cot = Array2::from_shape_fn(out.raw_dim(), |_| r.gen_range(-1.0..1.0));
    let grad = vjp(cot.view())?;
    check_directional(name, point, &grad, cfg, |p| Ok((&f(p)? * &cot).sum()))
}

/// Parameter and input checks of `L = sum cot * out` for a random cotangent.
pub fn check_mlp(name: &str, mlp: &Mlp, params: &[f64], input: MlpInput<'_>, cfg: &GradCheckConfig) -> Result<[GradCheck; 2]> {
    let mut r = rng::stream(cfg.seed, 1);
    let b = input.len();
    let out_dim = mlp.spec().output_dim;
    let cot = Array2::from_shape_fn((b, out_dim), |_| r.gen_range(-1.0..1.0));
    let shape = input.x.raw_dim();
    let loss = |p: &[f64], x: &[f64]| -> Result<f64> {
        let x = ArrayView2::from_shape(shape, x).expect("shape preserved");
        let out = mlp.forward_batch(p, &MlpInput::new(input.t, x, input.class))?;
        Ok((&out * &cot).sum())
    };
    let x0: Vec<f64> = input.x.iter().copied().collect();
    let (_, grad) = mlp.grad_params(params, &input, |_| (0.0, cot.clone()))?;
    let pc = check_directional(&format!("{name} params"), params, grad.as_slice(), cfg, |p| loss(p, &x0))?;
    let gx = mlp.input_vjp(params, &input, cot.view())?;
    let gxs: Vec<f64> = gx.iter().copied().collect();
    let xc = check_directional(&format!("{name} input"), &x0, &gxs, cfg, |xv| loss(params, xv))?;
    Ok([pc, xc])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, MlpSpec};

    fn batch(seed: u64, n: usize, d: usize) -> (Vec<f64>, Array2<f64>, Vec<usize>) {
        let mut r = rng::stream(seed, 9);
        let t = (0..n).map(|_| r.gen_range(0.0..1.0)).collect();
        let x = rng::normal_matrix(&mut r, n, d);
        let c = (0..n).map(|i| i % 3).collect();
        (t, x, c)
    }

    #[test]
    fn every_activation_and_context_passes() {
        let cfg = GradCheckConfig::default();
        for act in [Activation::Silu, Activation::Tanh, Activation::Identity] {
            for ctx in [0, 3] {
                let mut spec = MlpSpec::small(2, 2);
                spec.activation = act;
                spec.context_dim = ctx;
                let mlp = Mlp::new(spec).unwrap();
                let p = mlp.init_params(&mut rng::stream(4, 0));
                let (t, x, c) = batch(5, 7, 2);
                let cls: &[usize] = if ctx > 0 { &c } else { &[] };
                let input = MlpInput::new(&t, x.view(), cls);
                for check in check_mlp("mlp", &mlp, p.as_slice(), input, &cfg).unwrap() {
                    assert!(check.passed(), "{act:?} ctx {ctx}: {check:?}");
                }
            }
        }
    }

    #[test]
    fn vjp_of_a_linear_map() {
        let cfg = GradCheckConfig::default();
        let a = [[1.0, 2.0], [-3.0, 0.5], [0.0, 4.0]];
        let f = |p: &[f64]| Ok(Array2::from_shape_fn((3, 1), |(i, _)| a[i][0] * p[0] + a[i][1] * p[1] * p[1]));
        let ok = check_vjp("lin", &[0.7, -1.2], &cfg, f, |c| {
            Ok(vec![(0..3).map(|i| c[[i, 0]] * a[i][0]).sum(), (0..3).map(|i| c[[i, 0]] * a[i][1] * 2.0 * -1.2).sum()])
        })
        .unwrap();
        assert!(ok.passed(), "{ok:?}");
        let bad = check_vjp("lin", &[0.7, -1.2], &cfg, f, |c| Ok(vec![(0..3).map(|i| c[[i, 0]] * a[i][0]).sum(), 0.0])).unwrap();
        assert!(!bad.passed());
    }

    #[test]
    fn wrong_gradient_fails() {
        let cfg = GradCheckConfig::default();
        let c = check_directional("quad", &[1.0, 2.0], &[2.0, 4.5], &cfg, |p| Ok(p[0] * p[0] + p[1] * p[1])).unwrap();
        assert!(!c.passed());
        let ok = check_directional("quad", &[1.0, 2.0], &[2.0, 4.0], &cfg, |p| Ok(p[0] * p[0] + p[1] * p[1])).unwrap();
        assert!(ok.passed() && ok.max_rel_error < 1e-8);
    }
}
