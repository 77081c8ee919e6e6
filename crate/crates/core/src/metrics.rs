//! Sample-quality metrics: kernel MMD and Gaussian moment KL.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;

fn sq_dist(a: ArrayView2<f64>, i: usize, b: ArrayView2<f64>, j: usize) -> f64 {
    a.row(i).iter().zip(b.row(j).iter()).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Median pairwise distance of the pooled sample (at most 1000 points).
pub fn median_heuristic(x: ArrayView2<f64>, y: ArrayView2<f64>) -> f64 {
    let pooled = ndarray::concatenate(Axis(0), &[x.view(), y.view()]).expect("matching columns");
    let n = pooled.nrows().min(1000);
    let mut d = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in 0..i {
            d.push(sq_dist(pooled.view(), i, pooled.view(), j).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(|a, b| a.total_cmp(b));
    let m = d[d.len() / 2];
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

fn kernel_matrix(z: ArrayView2<f64>, bandwidth: f64) -> Array2<f64> {
    let n = z.nrows();
    let g = 0.5 / (bandwidth * bandwidth);
    let mut k = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let v = (-g * sq_dist(z, i, z, j)).exp();
            k[[i, j]] = v;
            k[[j, i]] = v;
        }
    }
    k
}

fn mmd2_from_kernel(k: &Array2<f64>, idx_x: &[usize], idx_y: &[usize]) -> f64 {
    let (m, n) = (idx_x.len() as f64, idx_y.len() as f64);
    let mut kxx = 0.0;
    for (a, &i) in idx_x.iter().enumerate() {
        for &j in &idx_x[..a] {
            kxx += k[[i, j]];
        }
    }
    let mut kyy = 0.0;
    for (a, &i) in idx_y.iter().enumerate() {
        for &j in &idx_y[..a] {
            kyy += k[[i, j]];
        }
    }
    let mut kxy = 0.0;
    for &i in idx_x {
        for &j in idx_y {
            kxy += k[[i, j]];
        }
    }
    2.0 * kxx / (m * (m - 1.0)) + 2.0 * kyy / (n * (n - 1.0)) - 2.0 * kxy / (m * n)
}

/// Unbiased squared MMD with a Gaussian kernel of the given bandwidth.
pub fn mmd2_unbiased(x: ArrayView2<f64>, y: ArrayView2<f64>, bandwidth: f64) -> Result<f64> {
    check_samples(x, y)?;
    let z = ndarray::concatenate(Axis(0), &[x.view(), y.view()]).expect("matching columns");
    let k = kernel_matrix(z.view(), bandwidth);
    let ix: Vec<usize> = (0..x.nrows()).collect();
    let iy: Vec<usize> = (x.nrows()..z.nrows()).collect();
    Ok(mmd2_from_kernel(&k, &ix, &iy))
}

fn check_samples(x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<()> {
    if x.nrows() < 2 || y.nrows() < 2 {
        return Err(Error::Empty("MMD needs at least two points per sample"));
    }
    if x.ncols() != y.ncols() {
        return Err(Error::ShapeMismatch {
            expected: x.ncols(),
            got: y.ncols(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmdReport {
    pub mmd2: f64,
    pub bandwidth: f64,
    /// Fraction of permutations with a statistic at least as large.
    pub p_value: f64,
    /// 95% quantile of the permutation null.
    pub null_q95: f64,
}

/// Median-heuristic MMD with a permutation test.
pub fn mmd_test(x: ArrayView2<f64>, y: ArrayView2<f64>, permutations: usize, seed: u64) -> Result<MmdReport> {
    check_samples(x, y)?;
    let bandwidth = median_heuristic(x, y);
    let z = ndarray::concatenate(Axis(0), &[x.view(), y.view()]).expect("matching columns");
    let k = kernel_matrix(z.view(), bandwidth);
    let m = x.nrows();
    let all: Vec<usize> = (0..z.nrows()).collect();
    let stat = mmd2_from_kernel(&k, &all[..m], &all[m..]);
    let mut r = rng::stream(seed, 0);
    let mut perm = all.clone();
    let mut null = Vec::with_capacity(permutations);
    for _ in 0..permutations {
        perm.shuffle(&mut r);
        null.push(mmd2_from_kernel(&k, &perm[..m], &perm[m..]));
    }
    let exceed = null.iter().filter(|&&v| v >= stat).count();
    null.sort_by(|a, b| a.total_cmp(b));
    let q95 = if null.is_empty() {
        f64::NAN
    } else {
        null[((null.len() as f64 * 0.95) as usize).min(null.len() - 1)]
    };
    Ok(MmdReport {
        mmd2: stat,
        bandwidth,
        p_value: (exceed + 1) as f64 / (permutations + 1) as f64,
        null_q95: q95,
    })
}

/// Sample mean and (unbiased) covariance.
pub fn sample_moments(x: ArrayView2<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let (n, d) = x.dim();
    if n < 2 {
        return Err(Error::Empty("moments need at least two samples"));
    }
    let mean: Vec<f64> = x.mean_axis(Axis(0)).expect("non-empty").to_vec();
    let mut cov = DMatrix::zeros(d, d);
    for row in x.rows() {
        for a in 0..d {
            for b in 0..d {
                cov[(a, b)] += (row[a] - mean[a]) * (row[b] - mean[b]);
            }
        }
    }
    cov /= (n - 1) as f64;
    Ok((mean, cov))
}

/// `KL(N(m1, S1) || N(m2, S2))`.
pub fn gaussian_kl(m1: &[f64], s1: &DMatrix<f64>, m2: &[f64], s2: &DMatrix<f64>) -> Result<f64> {
    let d = m1.len();
    let c2 = s2.clone().cholesky().ok_or(Error::Singular("target covariance"))?;
    let c1 = s1.clone().cholesky().ok_or(Error::Singular("sample covariance"))?;
    let inv2 = c2.inverse();
    let diff = DVector::from_iterator(d, m1.iter().zip(m2).map(|(a, b)| b - a));
    let logdet = |c: &nalgebra::Cholesky<f64, nalgebra::Dyn>| 2.0 * c.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let tr = (&inv2 * s1).trace();
    let quad = (diff.transpose() * &inv2 * &diff)[(0, 0)];
    Ok(0.5 * (tr + quad - d as f64 + logdet(&c2) - logdet(&c1)))
}

/// KL from the Gaussian fitted to `samples` to the isotropic `N(mean, var I)`.
pub fn moment_kl(samples: ArrayView2<f64>, mean: &[f64], var: f64) -> Result<f64> {
    let (m, s) = sample_moments(samples)?;
    let d = mean.len();
    gaussian_kl(&m, &s, mean, &(DMatrix::identity(d, d) * var))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::GaussianMixtureData;

    #[test]
    fn same_distribution_sits_in_null_band() {
        let data = GaussianMixtureData::symmetric_pair(2, 1.5, 0.25).unwrap();
        let (x, _) = data.sample(300, &mut rng::stream(1, 0));
        let (y, _) = data.sample(300, &mut rng::stream(2, 0));
        let rep = mmd_test(x.view(), y.view(), 200, 3).unwrap();
        assert!(rep.p_value > 0.01, "{rep:?}");
        assert!(rep.mmd2 < rep.null_q95 * 2.0);
    }

    #[test]
    fn shifted_distribution_is_detected() {
        let data = GaussianMixtureData::symmetric_pair(2, 1.5, 0.25).unwrap();
        let shifted = GaussianMixtureData::symmetric_pair(2, 1.0, 0.25).unwrap();
        let (x, _) = data.sample(300, &mut rng::stream(1, 0));
        let (y, _) = shifted.sample(300, &mut rng::stream(2, 0));
        let rep = mmd_test(x.view(), y.view(), 200, 3).unwrap();
        assert!(rep.p_value < 0.01, "{rep:?}");
        assert!(rep.mmd2 > rep.null_q95);
    }

    #[test]
    fn gaussian_kl_closed_forms() {
        let i2 = DMatrix::identity(2, 2);
        assert_eq!(gaussian_kl(&[0.0, 0.0], &i2, &[0.0, 0.0], &i2).unwrap(), 0.0);
        // mean shift: |delta|^2 / 2
        let k = gaussian_kl(&[1.0, 2.0], &i2, &[0.0, 0.0], &i2).unwrap();
        assert!((k - 2.5).abs() < 1e-12);
        // scale: d/2 (s - 1 - ln s)
        let k = gaussian_kl(&[0.0, 0.0], &(i2.clone() * 2.0), &[0.0, 0.0], &i2).unwrap();
        assert!((k - (2.0 - 1.0 - 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn moment_kl_of_exact_samples_is_small() {
        let data = GaussianMixtureData::gaussian(vec![0.5, -0.5], 0.3).unwrap();
        let (x, _) = data.sample(20_000, &mut rng::stream(5, 0));
        let k = moment_kl(x.view(), &[0.5, -0.5], 0.3).unwrap();
        assert!(k < 1e-3, "{k}");
    }
}
