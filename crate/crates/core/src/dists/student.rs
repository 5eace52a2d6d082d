use rand_distr::{Distribution, StudentT};
use statrs::function::gamma::ln_gamma;

use super::special::student_t_tail;
use super::{Density, Support, TailEnvelope};
use crate::error::{Result, SiviError};
use crate::ndcore::{RealArray, Rng};

/// Standard (location 0, scale 1) Student-t on the real line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudentT1D {
    nu: f64,
    log_norm: f64,
}

impl StudentT1D {
    pub fn new(nu: f64) -> Result<Self> {
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(SiviError::InvalidConfig(format!(
                "degrees of freedom must be > 0, got {nu}"
            )));
        }
        let log_norm = ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (nu * std::f64::consts::PI).ln();
        Ok(Self { nu, log_norm })
    }

    pub fn degrees_of_freedom(&self) -> f64 {
        self.nu
    }

    pub fn log_pdf(&self, t: f64) -> f64 {
        self.log_norm - 0.5 * (self.nu + 1.0) * (t * t / self.nu).ln_1p()
    }

    pub fn cdf(&self, t: f64) -> f64 {
        1.0 - student_t_tail(self.nu, t)
    }

    pub fn draw(&self, rng: &mut Rng) -> f64 {
        StudentT::new(self.nu).expect("validated nu").sample(rng)
    }
}

impl Density for StudentT1D {
    fn dim(&self) -> usize {
        1
    }

    fn log_density_unchecked(&self, x: &[f64]) -> f64 {
        self.log_pdf(x[0])
    }

    fn sample(&self, rng: &mut Rng, count: usize) -> Result<RealArray> {
        let dist = StudentT::new(self.nu).expect("validated nu");
        let data = (0..count).map(|_| dist.sample(rng)).collect();
        RealArray::matrix(count, 1, data)
    }

    fn support(&self) -> Support {
        Support::AllSpace
    }

    fn tail(&self) -> TailEnvelope {
        TailEnvelope::Polynomial(self.nu)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cauchy_density() {
        let c = StudentT1D::new(1.0).unwrap();
        assert!((c.log_pdf(0.0) + std::f64::consts::PI.ln()).abs() < 1e-13);
        assert!(StudentT1D::new(0.0).is_err());
    }

    #[test]
    fn empirical_upper_quantile() {
        let t3 = StudentT1D::new(3.0).unwrap();
        let mut s = t3.sample(&mut Rng::new(5), 200_000).unwrap().into_data();
        s.sort_by(f64::total_cmp);
        let q99 = s[(0.99 * s.len() as f64) as usize];
        assert!((q99 / 4.541 - 1.0).abs() < 0.10, "q99 = {q99}");
    }
}
