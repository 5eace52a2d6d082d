use crate::error::{Result, SiviError};
use crate::ndcore::RealArray;

pub const MIN_MODE_SAMPLES: usize = 1000;

/// `(#{x > 0} + 1/2) / (#{x < 0} + 1/2)`.
pub fn mode_ratio(samples: &[f64]) -> Result<f64> {
    if samples.len() < MIN_MODE_SAMPLES {
        return Err(SiviError::InsufficientSamples(format!(
            "mode ratio needs at least {MIN_MODE_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    let right = samples.iter().filter(|&&x| x > 0.0).count() as f64;
    let left = samples.iter().filter(|&&x| x < 0.0).count() as f64;
    Ok((right + 0.5) / (left + 0.5))
}

/// Fraction of samples inside each closed disk of `radius` around `centers`.
pub fn branch_masses(samples: &RealArray, centers: &[[f64; 2]], radius: f64) -> Result<Vec<f64>> {
    if samples.cols() != 2 {
        return Err(SiviError::DimensionMismatch {
            expected: 2,
            found: samples.cols(),
        });
    }
    for i in 0..centers.len() {
        for j in i + 1..centers.len() {
            let d = (centers[i][0] - centers[j][0]).hypot(centers[i][1] - centers[j][1]);
            if d <= 2.0 * radius {
                return Err(SiviError::OverlappingRegions { first: i, second: j });
            }
        }
    }
    if samples.rows() == 0 {
        return Err(SiviError::InsufficientSamples("no samples".into()));
    }
    let r2 = radius * radius;
    let mut counts = vec![0usize; centers.len()];
    for x in samples.row_iter() {
        if let Some(b) = centers
            .iter()
            .position(|c| (x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2) <= r2)
        {
            counts[b] += 1;
        }
    }
    Ok(counts.into_iter().map(|c| c as f64 / samples.rows() as f64).collect())
}
