use serde::{Deserialize, Serialize};

use super::model::SmoothLogPosterior;
use crate::dists::chi_squared_quantile;
use crate::error::{Result, SiviError};
use crate::ndcore::linalg::{symmetrize, Cholesky};
use crate::ndcore::RealArray;

pub const NEWTON_TOLERANCE: f64 = 1e-8;
pub const NEWTON_MAX_ITERATIONS: usize = 100;
pub const MAX_HALVINGS: usize = 50;

/// Gaussian posterior summary `(m, V)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianApprox {
    pub mean: Vec<f64>,
    /// Row-major `d x d`.
    pub covariance: Vec<f64>,
}

impl GaussianApprox {
    /// Validates symmetry (1e-10) and positive definiteness.
    pub fn new(mean: Vec<f64>, covariance: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        if covariance.len() != d * d {
            return Err(SiviError::DimensionMismatch {
                expected: d * d,
                found: covariance.len(),
            });
        }
        for a in 0..d {
            for b in 0..a {
                let (x, y) = (covariance[a * d + b], covariance[b * d + a]);
                if (x - y).abs() > 1e-10 * x.abs().max(y.abs()).max(1.0) {
                    return Err(SiviError::InvalidConfig("covariance is not symmetric".into()));
                }
            }
        }
        Cholesky::new(&covariance, d)?;
        Ok(Self { mean, covariance })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn trace(&self) -> f64 {
        let d = self.dim();
        (0..d).map(|j| self.covariance[j * d + j]).sum()
    }

    /// `(theta - m)' V^{-1} (theta - m)`.
    pub fn quad_form(&self, theta: &[f64]) -> Result<f64> {
        if theta.len() != self.dim() {
            return Err(SiviError::DimensionMismatch {
                expected: self.dim(),
                found: theta.len(),
            });
        }
        let chol = Cholesky::new(&self.covariance, self.dim())?;
        let diff: Vec<f64> = theta.iter().zip(&self.mean).map(|(t, m)| t - m).collect();
        Ok(chol.inv_quad_form(&diff))
    }
}

/// Closed-set membership: `quad <= chi2_{dim, level}`.
pub fn within_credible_level(quad: f64, dim: usize, level: f64) -> bool {
    quad <= chi_squared_quantile(dim as f64, level)
}

/// Whether the closed credible ellipsoid `{q(theta) <= chi2_{d, level}}` contains `theta`.
pub fn ellipsoid_covers(approx: &GaussianApprox, theta: &[f64], level: f64) -> Result<bool> {
    Ok(within_credible_level(approx.quad_form(theta)?, approx.dim(), level))
}

/// Damped Newton ascent to the posterior mode, then `V = (-H)^{-1}` there.
pub fn laplace_fit<P: SmoothLogPosterior + ?Sized>(post: &P) -> Result<GaussianApprox> {
    let d = post.dim();
    let mut theta = vec![0.0; d];
    let (mut value, mut grad, mut hess) = post.value_grad_hessian(&theta);
    let norm = |g: &[f64]| g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut iterations = 0;
    while norm(&grad) >= NEWTON_TOLERANCE {
        if iterations == NEWTON_MAX_ITERATIONS {
            return Err(SiviError::NewtonNonConvergence { grad_norm: norm(&grad) });
        }
        iterations += 1;
        let neg_h: Vec<f64> = hess.iter().map(|h| -h).collect();
        let step = Cholesky::new(&neg_h, d)?.solve(&grad);
        // Below this predicted gain the line search only sees rounding noise.
        let decrement: f64 = step.iter().zip(&grad).map(|(s, g)| s * g).sum();
        if decrement < 1e-12 * value.abs().max(1.0) {
            theta.iter_mut().zip(&step).for_each(|(t, s)| *t += s);
            (value, grad, hess) = post.value_grad_hessian(&theta);
            continue;
        }
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let cand: Vec<f64> = theta.iter().zip(&step).map(|(t, s)| t + scale * s).collect();
            let (v, g, h) = post.value_grad_hessian(&cand);
            if v > value {
                theta = cand;
                (value, grad, hess) = (v, g, h);
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            return Err(SiviError::NewtonNonConvergence { grad_norm: norm(&grad) });
        }
    }
    let neg_h: Vec<f64> = hess.iter().map(|h| -h).collect();
    let mut cov = Cholesky::new(&neg_h, d)?.inverse();
    symmetrize(&mut cov, d);
    GaussianApprox::new(theta, cov)
}

/// Empirical mean and (symmetrized, unbiased) covariance of sample rows.
pub fn empirical_moments(samples: &RealArray, min_samples: usize) -> Result<GaussianApprox> {
    let (n, d) = (samples.rows(), samples.cols());
    if n < min_samples.max(d + 1) {
        return Err(SiviError::InsufficientSamples(format!(
            "moment estimate needs at least {} samples, got {n}",
            min_samples.max(d + 1)
        )));
    }
    let mut mean = vec![0.0; d];
    for r in samples.row_iter() {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = vec![0.0; d * d];
    for r in samples.row_iter() {
        for a in 0..d {
            let da = r[a] - mean[a];
            for b in 0..=a {
                cov[a * d + b] += da * (r[b] - mean[b]);
            }
        }
    }
    for a in 0..d {
        for b in 0..=a {
            let v = cov[a * d + b] / (n - 1) as f64;
            cov[a * d + b] = v;
            cov[b * d + a] = v;
        }
    }
    GaussianApprox::new(mean, cov)
}
