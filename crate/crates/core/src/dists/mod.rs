//! Analytic target and reference densities.

mod gaussian;
mod mixture;
pub mod special;
mod student;
mod truncated;

pub use gaussian::{gaussian_kl, Covariance, Gaussian};
pub use mixture::{GaussianMixture, THREE_BRANCH_CENTERS};
pub use special::{chi_squared_quantile, normal_cdf, student_t_tail};
pub use student::StudentT1D;
pub use truncated::{TruncatedGaussian2D, REJECTION_CAP};

use crate::error::{Result, SiviError};
use crate::ndcore::{RealArray, Rng};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Support {
    AllSpace,
    /// Closed Euclidean ball of the given radius around the origin.
    Ball(f64),
}

/// Tail metadata. Not verified.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TailEnvelope {
    SubGaussian,
    /// Polynomial decay with the given index.
    Polynomial(f64),
    Compact,
}

pub trait Density: Send + Sync {
    fn dim(&self) -> usize;

    /// Log-density; the caller guarantees `x.len() == self.dim()`.
    fn log_density_unchecked(&self, x: &[f64]) -> f64;

    fn sample(&self, rng: &mut Rng, count: usize) -> Result<RealArray>;

    fn support(&self) -> Support;

    fn tail(&self) -> TailEnvelope;

    /// Log-density with a dimension check; `-inf` outside the support.
    fn log_density(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(SiviError::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(self.log_density_unchecked(x))
    }

    fn density(&self, x: &[f64]) -> f64 {
        self.log_density_unchecked(x).exp()
    }
}

/// The concrete targets used by the experiments.
#[derive(Debug, Clone)]
pub enum DensitySpec {
    Gaussian(Gaussian),
    StudentT(StudentT1D),
    Mixture(GaussianMixture),
    TruncatedGaussian2D(TruncatedGaussian2D),
}

impl DensitySpec {
    fn inner(&self) -> &dyn Density {
        match self {
            Self::Gaussian(d) => d,
            Self::StudentT(d) => d,
            Self::Mixture(d) => d,
            Self::TruncatedGaussian2D(d) => d,
        }
    }

    /// CDF for one-dimensional targets.
    pub fn cdf_1d(&self, x: f64) -> Option<f64> {
        if self.dim() != 1 {
            return None;
        }
        match self {
            Self::Gaussian(g) => {
                let var = g.covariance_matrix()[0];
                Some(normal_cdf((x - g.mean()[0]) / var.sqrt()))
            }
            Self::StudentT(t) => Some(t.cdf(x)),
            Self::Mixture(m) => Some(
                m.weights()
                    .iter()
                    .zip(m.components())
                    .map(|(w, g)| w * normal_cdf((x - g.mean()[0]) / g.covariance_matrix()[0].sqrt()))
                    .sum(),
            ),
            Self::TruncatedGaussian2D(_) => None,
        }
    }
}

impl Density for DensitySpec {
    fn dim(&self) -> usize {
        self.inner().dim()
    }

    fn log_density_unchecked(&self, x: &[f64]) -> f64 {
        self.inner().log_density_unchecked(x)
    }

    fn sample(&self, rng: &mut Rng, count: usize) -> Result<RealArray> {
        self.inner().sample(rng, count)
    }

    fn support(&self) -> Support {
        self.inner().support()
    }

    fn tail(&self) -> TailEnvelope {
        self.inner().tail()
    }
}
