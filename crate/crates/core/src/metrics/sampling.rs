use serde::{Deserialize, Serialize};

use crate::dists::Density;
use crate::error::{Result, SiviError};
use crate::ndcore::{mean_and_stderr, RealArray, Rng};

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

/// Forward-KL estimate; `value` is `+inf` when `q` underflowed at some sample.
#[derive(Debug, Clone, PartialEq)]
pub struct KlEstimate {
    pub value: f64,
    pub stderr: f64,
    pub underflow_at: Option<Vec<f64>>,
}

/// One-sided sampling TV, `E_p[(1 - q(X)/p(X))_+] = int (p - q)_+`, from
/// log-densities at draws of `p`.
pub fn tv_sampling_from<P, Q>(samples: &RealArray, log_p: P, log_q: Q) -> Result<Estimate>
where
    P: Fn(&[f64]) -> f64,
    Q: Fn(&[f64]) -> f64,
{
    if samples.rows() < 2 {
        return Err(SiviError::InsufficientSamples("need at least two draws".into()));
    }
    let mut terms = Vec::with_capacity(samples.rows());
    for (i, x) in samples.row_iter().enumerate() {
        let lp = log_p(x);
        if lp == f64::NEG_INFINITY || lp.is_nan() {
            return Err(SiviError::ZeroDensityAtSample { index: i });
        }
        let lq = log_q(x);
        if lq.is_nan() {
            return Err(SiviError::NonFiniteDensity { index: i });
        }
        terms.push((1.0 - (lq - lp).exp()).max(0.0));
    }
    let (value, stderr) = mean_and_stderr(&terms);
    Ok(Estimate { value, stderr })
}

pub fn tv_sampling<P, Q>(p: &P, log_q: Q, n: usize, rng: &mut Rng) -> Result<Estimate>
where
    P: Density + ?Sized,
    Q: Fn(&[f64]) -> f64,
{
    let s = p.sample(rng, n)?;
    tv_sampling_from(&s, |x| p.log_density_unchecked(x), log_q)
}

/// `(1/N) sum [log p(X_i) - log q(X_i)]` at draws of `p`.
pub fn kl_forward_from<P, Q>(samples: &RealArray, log_p: P, log_q: Q) -> Result<KlEstimate>
where
    P: Fn(&[f64]) -> f64,
    Q: Fn(&[f64]) -> f64,
{
    if samples.rows() < 2 {
        return Err(SiviError::InsufficientSamples("need at least two draws".into()));
    }
    let mut terms = Vec::with_capacity(samples.rows());
    for (i, x) in samples.row_iter().enumerate() {
        let lp = log_p(x);
        if !lp.is_finite() {
            return Err(SiviError::ZeroDensityAtSample { index: i });
        }
        let lq = log_q(x);
        if lq == f64::NEG_INFINITY {
            return Ok(KlEstimate {
                value: f64::INFINITY,
                stderr: f64::NAN,
                underflow_at: Some(x.to_vec()),
            });
        }
        if !lq.is_finite() {
            return Err(SiviError::NonFiniteDensity { index: i });
        }
        terms.push(lp - lq);
    }
    let (value, stderr) = mean_and_stderr(&terms);
    Ok(KlEstimate {
        value,
        stderr,
        underflow_at: None,
    })
}

pub fn kl_forward_mc<P, Q>(p: &P, log_q: Q, n: usize, rng: &mut Rng) -> Result<KlEstimate>
where
    P: Density + ?Sized,
    Q: Fn(&[f64]) -> f64,
{
    let s = p.sample(rng, n)?;
    kl_forward_from(&s, |x| p.log_density_unchecked(x), log_q)
}
