use crate::error::{ensure, Result};
use crate::stats::Estimate;

/// Central finite differences of a Monte Carlo objective.
///
/// `objective(theta)` must return per-sample values computed with the same
/// random numbers on every call, so that the paired differences
/// `(J_n(theta + h e_k) - J_n(theta - h e_k)) / 2h` have small variance.
pub fn fd_objective_gradient<F>(theta: &[f64], h: f64, mut objective: F) -> Result<Vec<Estimate>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    ensure(h > 0.0, || format!("finite-difference step must be positive, got {h}"))?;
    let mut out = Vec::with_capacity(theta.len());
    for k in 0..theta.len() {
        let mut up = theta.to_vec();
        up[k] += h;
        let mut dn = theta.to_vec();
        dn[k] -= h;
        let ju = objective(&up)?;
        let jd = objective(&dn)?;
        ensure(ju.len() == jd.len() && !ju.is_empty(), || {
            "objective must return the same non-empty sample count".into()
        })?;
        let diffs: Vec<f64> = ju.iter().zip(&jd).map(|(a, b)| (a - b) / (2.0 * h)).collect();
        out.push(Estimate::from_samples(&diffs));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn quadratic_is_exact() {
        let g = fd_objective_gradient(&[1.0, -2.0], 1e-3, |th| {
            Ok(vec![3.0 * th[0] * th[0] + th[0] * th[1]; 2])
        })
        .unwrap();
        assert!((g[0].mean - (6.0 - 2.0)).abs() < 1e-8);
        assert!((g[1].mean - 1.0).abs() < 1e-8);
    }

    #[test]
    fn unused_parameter_has_zero_gradient() {
        let g = fd_objective_gradient(&[0.3, 0.7], 1e-2, |th| {
            let mut r = rng::stream(1, 0);
            Ok(rng::normals(&mut r, 500).into_iter().map(|z| (th[0] + z).powi(2)).collect())
        })
        .unwrap();
        assert_eq!(g[1].mean, 0.0);
        assert!((g[0].mean - 0.6).abs() < 3.0 * g[0].std_error + 1e-9);
    }
}
