use std::f64::consts::PI;

use super::special::gauss_legendre;
use super::{Density, Support, TailEnvelope};
use crate::error::{Result, SiviError};
use crate::ndcore::{RealArray, Rng};

/// Planar density proportional to `exp(-c |x|^2) 1{|x| <= R}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedGaussian2D {
    precision_scale: f64,
    radius: f64,
    log_normalizer: f64,
}

pub const REJECTION_CAP: usize = 1000;

impl TruncatedGaussian2D {
    /// The default target: `c = 2`, `R = 2`.
    pub fn standard() -> Self {
        Self::new(2.0, 2.0)
    }

    /// Normalizer from a 400-node Gauss–Legendre rule on the radius (the angular
    /// integral is exactly `2 pi` by symmetry).
    pub fn new(precision_scale: f64, radius: f64) -> Self {
        let (nodes, weights) = gauss_legendre(400);
        let half = 0.5 * radius;
        let radial: f64 = nodes
            .iter()
            .zip(&weights)
            .map(|(x, w)| {
                let r = half * (x + 1.0);
                w * half * r * (-precision_scale * r * r).exp()
            })
            .sum();
        Self {
            precision_scale,
            radius,
            log_normalizer: (2.0 * PI * radial).ln(),
        }
    }

    pub fn normalizer(&self) -> f64 {
        self.log_normalizer.exp()
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn precision_scale(&self) -> f64 {
        self.precision_scale
    }
}

impl Density for TruncatedGaussian2D {
    fn dim(&self) -> usize {
        2
    }

    fn log_density_unchecked(&self, x: &[f64]) -> f64 {
        let r2 = x[0] * x[0] + x[1] * x[1];
        if r2 > self.radius * self.radius {
            f64::NEG_INFINITY
        } else {
            -self.precision_scale * r2 - self.log_normalizer
        }
    }

    /// Rejection from `N(0, I / (2c))`, i.e. the untruncated Gaussian.
    fn sample(&self, rng: &mut Rng, count: usize) -> Result<RealArray> {
        let sd = (0.5 / self.precision_scale).sqrt();
        let mut out = RealArray::zeros(&[count, 2]);
        for i in 0..count {
            let mut accepted = false;
            for _ in 0..REJECTION_CAP {
                let (a, b) = (sd * rng.standard_normal(), sd * rng.standard_normal());
                if a * a + b * b <= self.radius * self.radius {
                    out.row_mut(i).copy_from_slice(&[a, b]);
                    accepted = true;
                    break;
                }
            }
            if !accepted {
                return Err(SiviError::RejectionCapExceeded { cap: REJECTION_CAP });
            }
        }
        Ok(out)
    }

    fn support(&self) -> Support {
        Support::Ball(self.radius)
    }

    fn tail(&self) -> TailEnvelope {
        TailEnvelope::Compact
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizer_matches_closed_form() {
        let t = TruncatedGaussian2D::standard();
        let exact = PI / 2.0 * (1.0 - (-8.0f64).exp());
        assert!((t.normalizer() - exact).abs() < 1e-8 * exact);
    }

    #[test]
    fn outside_ball_is_neg_infinity() {
        let t = TruncatedGaussian2D::standard();
        assert_eq!(t.log_density_unchecked(&[3.0, 0.0]), f64::NEG_INFINITY);
        assert!(t.log_density_unchecked(&[2.0, 0.0]).is_finite());
    }

    #[test]
    fn samples_inside_ball() {
        let s = TruncatedGaussian2D::standard()
            .sample(&mut Rng::new(4), 50_000)
            .unwrap();
        assert!(s.row_iter().all(|r| r[0] * r[0] + r[1] * r[1] <= 4.0));
    }

    #[test]
    fn rejection_cap_enforced() {
        // a tiny ball far in the proposal's tail rejects almost everything
        let t = TruncatedGaussian2D::new(1e-6, 1e-3);
        assert!(matches!(
            t.sample(&mut Rng::new(1), 10),
            Err(SiviError::RejectionCapExceeded { cap: REJECTION_CAP })
        ));
    }
}
