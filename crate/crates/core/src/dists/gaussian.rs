use std::f64::consts::PI;

use super::{Density, Support, TailEnvelope};
use crate::error::{Result, SiviError};
use crate::ndcore::linalg::Cholesky;
use crate::ndcore::{RealArray, Rng};

#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    Diagonal(Vec<f64>),
    /// Row-major symmetric matrix.
    Dense(Vec<f64>),
}

/// Multivariate normal with diagonal or dense covariance.
#[derive(Debug, Clone)]
pub struct Gaussian {
    mean: Vec<f64>,
    covariance: Covariance,
    chol: Cholesky,
}

impl Gaussian {
    pub fn new(mean: Vec<f64>, covariance: Covariance) -> Result<Self> {
        let d = mean.len();
        let dense = match &covariance {
            Covariance::Diagonal(v) => {
                if v.len() != d {
                    return Err(SiviError::DimensionMismatch {
                        expected: d,
                        found: v.len(),
                    });
                }
                let mut a = vec![0.0; d * d];
                for (i, s) in v.iter().enumerate() {
                    a[i * d + i] = *s;
                }
                a
            }
            Covariance::Dense(a) => a.clone(),
        };
        let chol = Cholesky::new(&dense, d)?;
        Ok(Self { mean, covariance, chol })
    }

    pub fn diagonal(mean: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        Self::new(mean, Covariance::Diagonal(variances))
    }

    pub fn isotropic(mean: Vec<f64>, variance: f64) -> Result<Self> {
        let d = mean.len();
        Self::diagonal(mean, vec![variance; d])
    }

    pub fn standard(dim: usize) -> Self {
        Self::isotropic(vec![0.0; dim], 1.0).expect("identity covariance")
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn covariance(&self) -> &Covariance {
        &self.covariance
    }

    pub fn covariance_matrix(&self) -> Vec<f64> {
        let d = self.mean.len();
        match &self.covariance {
            Covariance::Dense(a) => a.clone(),
            Covariance::Diagonal(v) => {
                let mut a = vec![0.0; d * d];
                for (i, s) in v.iter().enumerate() {
                    a[i * d + i] = *s;
                }
                a
            }
        }
    }

    pub fn cholesky(&self) -> &Cholesky {
        &self.chol
    }
}

impl Density for Gaussian {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_density_unchecked(&self, x: &[f64]) -> f64 {
        let d = self.mean.len();
        let diff: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        -0.5 * (d as f64 * (2.0 * PI).ln() + self.chol.log_det() + self.chol.inv_quad_form(&diff))
    }

    fn sample(&self, rng: &mut Rng, count: usize) -> Result<RealArray> {
        let d = self.mean.len();
        let l = self.chol.lower();
        let mut out = RealArray::zeros(&[count, d]);
        let mut eps = vec![0.0; d];
        for i in 0..count {
            rng.fill_standard_normal(&mut eps);
            let row = out.row_mut(i);
            for r in 0..d {
                row[r] = self.mean[r] + (0..=r).map(|c| l[r * d + c] * eps[c]).sum::<f64>();
            }
        }
        Ok(out)
    }

    fn support(&self) -> Support {
        Support::AllSpace
    }

    fn tail(&self) -> TailEnvelope {
        TailEnvelope::SubGaussian
    }
}

/// Closed-form `KL(a || b)` between Gaussians.
pub fn gaussian_kl(a: &Gaussian, b: &Gaussian) -> Result<f64> {
    let d = a.dim();
    if b.dim() != d {
        return Err(SiviError::DimensionMismatch {
            expected: d,
            found: b.dim(),
        });
    }
    let sa = a.covariance_matrix();
    // tr(Sb^-1 Sa) via solves against the columns of Sa
    let mut tr = 0.0;
    let mut col = vec![0.0; d];
    for j in 0..d {
        for i in 0..d {
            col[i] = sa[i * d + j];
        }
        tr += b.chol.solve(&col)[j];
    }
    let diff: Vec<f64> = b.mean.iter().zip(&a.mean).map(|(u, v)| u - v).collect();
    let quad = b.chol.inv_quad_form(&diff);
    let kl = 0.5 * (tr + quad - d as f64 + b.chol.log_det() - a.chol.log_det());
    Ok(kl.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_normal_log_density_at_zero() {
        let g = Gaussian::standard(1);
        assert!((g.log_density_unchecked(&[0.0]) + 0.918_938_533_204_672_7).abs() < 1e-15);
    }

    #[test]
    fn closed_form_kl_values() {
        let n01 = Gaussian::standard(1);
        assert_eq!(gaussian_kl(&n01, &n01).unwrap(), 0.0);
        let n11 = Gaussian::isotropic(vec![1.0], 1.0).unwrap();
        assert!((gaussian_kl(&n11, &n01).unwrap() - 0.5).abs() < 1e-15);
        let n02 = Gaussian::isotropic(vec![0.0], 2.0).unwrap();
        let expected = 0.5 * (2.0 - 1.0 - 2f64.ln());
        assert!((gaussian_kl(&n02, &n01).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.1534).abs() < 1e-4);
    }

    #[test]
    fn dense_and_diagonal_agree() {
        let a = Gaussian::diagonal(vec![0.3, -1.0], vec![2.0, 0.5]).unwrap();
        let b = Gaussian::new(vec![0.3, -1.0], Covariance::Dense(vec![2.0, 0.0, 0.0, 0.5])).unwrap();
        let x = [1.2, 0.1];
        assert!((a.log_density_unchecked(&x) - b.log_density_unchecked(&x)).abs() < 1e-14);
    }

    #[test]
    fn singular_covariance_rejected() {
        assert!(matches!(
            Gaussian::new(vec![0.0, 0.0], Covariance::Dense(vec![1.0, 1.0, 1.0, 1.0])),
            Err(SiviError::NotPositiveDefinite)
        ));
        assert!(Gaussian::isotropic(vec![0.0], 0.0).is_err());
    }

    #[test]
    fn dense_sampler_matches_covariance() {
        let cov = vec![1.0, 0.6, 0.6, 2.0];
        let g = Gaussian::new(vec![1.0, -1.0], Covariance::Dense(cov.clone())).unwrap();
        let n = 200_000;
        let s = g.sample(&mut Rng::new(3), n).unwrap();
        let mean: Vec<f64> = (0..2)
            .map(|j| s.row_iter().map(|r| r[j]).sum::<f64>() / n as f64)
            .collect();
        let c01 = s.row_iter().map(|r| (r[0] - mean[0]) * (r[1] - mean[1])).sum::<f64>() / n as f64;
        assert!((mean[0] - 1.0).abs() < 0.01 && (mean[1] + 1.0).abs() < 0.01);
        assert!((c01 - 0.6).abs() < 0.02);
    }
}
