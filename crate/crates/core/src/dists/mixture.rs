use super::gaussian::Gaussian;
use super::{Density, Support, TailEnvelope};
use crate::error::{Result, SiviError};
use crate::ndcore::{log_sum_exp, RealArray, Rng};

/// Finite mixture of Gaussians sharing one dimension.
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    log_weights: Vec<f64>,
    components: Vec<Gaussian>,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, components: Vec<Gaussian>) -> Result<Self> {
        if weights.len() != components.len() || weights.is_empty() {
            return Err(SiviError::InvalidConfig(
                "mixture needs one positive weight per component".into(),
            ));
        }
        if weights.iter().any(|w| w.is_nan() || *w <= 0.0) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(SiviError::InvalidConfig(format!(
                "mixture weights must be positive and sum to 1, got {weights:?}"
            )));
        }
        let d = components[0].dim();
        if let Some(c) = components.iter().find(|c| c.dim() != d) {
            return Err(SiviError::DimensionMismatch {
                expected: d,
                found: c.dim(),
            });
        }
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Ok(Self {
            weights,
            log_weights,
            components,
        })
    }

    /// `0.5 N(-3, 1) + 0.5 N(3, 1)`.
    pub fn symmetric_bimodal() -> Self {
        Self::new(
            vec![0.5, 0.5],
            vec![
                Gaussian::isotropic(vec![-3.0], 1.0).unwrap(),
                Gaussian::isotropic(vec![3.0], 1.0).unwrap(),
            ],
        )
        .unwrap()
    }

    /// Equal-weight three-branch target in the plane with component scale 0.05.
    pub fn three_branch() -> Self {
        Self::new(
            vec![1.0 / 3.0; 3],
            THREE_BRANCH_CENTERS
                .iter()
                .map(|c| Gaussian::isotropic(c.to_vec(), 0.05 * 0.05).unwrap())
                .collect(),
        )
        .unwrap()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[Gaussian] {
        &self.components
    }
}

pub const THREE_BRANCH_CENTERS: [[f64; 2]; 3] = [[0.0, 0.8], [-0.7, -0.5], [0.7, -0.5]];

impl Density for GaussianMixture {
    fn dim(&self) -> usize {
        self.components[0].dim()
    }

    fn log_density_unchecked(&self, x: &[f64]) -> f64 {
        let terms: Vec<f64> = self
            .components
            .iter()
            .zip(&self.log_weights)
            .map(|(c, lw)| lw + c.log_density_unchecked(x))
            .collect();
        log_sum_exp(&terms)
    }

    fn sample(&self, rng: &mut Rng, count: usize) -> Result<RealArray> {
        let d = self.dim();
        let mut out = RealArray::zeros(&[count, d]);
        for i in 0..count {
            let u = rng.uniform();
            let mut acc = 0.0;
            let mut j = self.weights.len() - 1;
            for (k, w) in self.weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    j = k;
                    break;
                }
            }
            let draw = self.components[j].sample(rng, 1)?;
            out.row_mut(i).copy_from_slice(draw.data());
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bimodal_log_density_at_origin() {
        // both components contribute phi(3)
        let m = GaussianMixture::symmetric_bimodal();
        let v = m.log_density_unchecked(&[0.0]);
        let phi3 = (-4.5f64).exp() / (2.0 * std::f64::consts::PI).sqrt();
        assert!((v - phi3.ln()).abs() < 1e-13);
        assert!((v + 5.419).abs() < 1e-3);
    }

    #[test]
    fn bimodal_sample_mean_near_zero() {
        let s = GaussianMixture::symmetric_bimodal()
            .sample(&mut Rng::new(8), 1_000_000)
            .unwrap();
        let mean = s.data().iter().sum::<f64>() / 1e6;
        // sd of the mean is sqrt(10)/1000 ~ 0.0032
        assert!(mean.abs() < 0.02, "{mean}");
    }

    #[test]
    fn weights_validated() {
        let g = || Gaussian::standard(1);
        assert!(GaussianMixture::new(vec![0.5, 0.6], vec![g(), g()]).is_err());
        assert!(GaussianMixture::new(vec![1.0, 0.0], vec![g(), g()]).is_err());
        assert!(GaussianMixture::new(vec![1.0], vec![g(), g()]).is_err());
        assert!((GaussianMixture::three_branch().weights().iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }
}
