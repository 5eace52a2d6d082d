use serde::{Deserialize, Serialize};

use super::family::{KernelParams, SiviFamily, TracedKernel, UNDERFLOW_LOG};
use crate::error::{Result, SiviError};
use crate::ndcore::{RealArray, Rng};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// How latent draws are assigned to the data points of a minibatch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LatentSharing {
    /// Fresh `K` latents for every data point.
    PerDatum,
    /// One set of `K` latents shared by the whole minibatch.
    #[default]
    Shared,
}

/// Value and gradient (ascent direction) of a stochastic objective.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveValue {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// Accumulates cotangents on kernel means and raw log-scales, then pulls
/// them back through both networks.
struct KernelCotangents {
    mu: RealArray,
    sigma: RealArray,
}

impl KernelCotangents {
    fn new(rows: usize, dim: usize) -> Self {
        Self {
            mu: RealArray::zeros(&[rows, dim]),
            sigma: RealArray::zeros(&[rows, dim]),
        }
    }

    /// Adds `w * d/d(mu_k, sigma_k) log N(x; mu_k, sigma_k^2)`.
    fn add_kernel_term(&mut self, params: &KernelParams, k: usize, x: &[f64], w: f64) {
        let mu = params.mu.row(k);
        let sigma = params.sigma.row(k);
        let cm = self.mu.row_mut(k);
        for j in 0..x.len() {
            let r = (x[j] - mu[j]) / sigma[j];
            cm[j] += w * r / sigma[j];
        }
        let cs = self.sigma.row_mut(k);
        for j in 0..x.len() {
            let r = (x[j] - mu[j]) / sigma[j];
            cs[j] += w * (r * r - 1.0) / sigma[j];
        }
    }

    fn pull_back(self, fam: &SiviFamily, traced: &TracedKernel) -> Result<Vec<f64>> {
        let KernelCotangents { mu, sigma } = self;
        let mut cot_s = sigma;
        let p = &traced.params;
        for ((c, s), sg) in cot_s.data_mut().iter_mut().zip(p.log_scale.data()).zip(p.sigma.data()) {
            *c *= fam.scale_derivative(*s, *sg);
        }
        let split = fam.mu_net().num_params();
        let mut grad = vec![0.0; fam.num_params()];
        fam.mu_net()
            .backward_accumulate(&traced.mu_trace, &mu, &mut grad[..split])?;
        fam.log_scale_net()
            .backward_accumulate(&traced.scale_trace, &cot_s, &mut grad[split..])?;
        Ok(grad)
    }
}

fn log_kernel(params: &KernelParams, k: usize, x: &[f64]) -> f64 {
    let mu = params.mu.row(k);
    let sigma = params.sigma.row(k);
    let mut out = -(x.len() as f64) * HALF_LN_2PI;
    for j in 0..x.len() {
        let r = (x[j] - mu[j]) / sigma[j];
        out -= sigma[j].ln() + 0.5 * r * r;
    }
    out
}

/// Softmax weights of `a` written into `a`; returns `log sum exp(a)`.
fn softmax_in_place(a: &mut [f64]) -> f64 {
    let max = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in a.iter_mut() {
        *v = (*v - max).exp();
        s += *v;
    }
    for v in a.iter_mut() {
        *v /= s;
    }
    max + s.ln()
}

/// Finite-`K` density-fit surrogate
/// `L = (1/n) sum_i log((1/K) sum_k k(x_i | z_k))` and its parameter gradient.
pub fn density_fit_objective(
    fam: &SiviFamily,
    data: &RealArray,
    k: usize,
    sharing: LatentSharing,
    rng: &mut Rng,
) -> Result<ObjectiveValue> {
    if k == 0 {
        return Err(SiviError::InvalidConfig("K must be at least 1".into()));
    }
    if data.cols() != fam.dim() {
        return Err(SiviError::DimensionMismatch {
            expected: fam.dim(),
            found: data.cols(),
        });
    }
    let n = data.rows();
    if n == 0 {
        return Err(SiviError::InsufficientSamples("empty minibatch".into()));
    }
    let rows = match sharing {
        LatentSharing::Shared => k,
        LatentSharing::PerDatum => n * k,
    };
    let z = fam.draw_latents(rng, rows);
    let traced = fam.kernel_params_traced(&z)?;
    let params = &traced.params;
    let mut cot = KernelCotangents::new(rows, fam.dim());
    let log_k = (k as f64).ln();
    let mut total = 0.0;
    let mut atoms = vec![0.0; k];
    for i in 0..n {
        let x = data.row(i);
        let base = match sharing {
            LatentSharing::Shared => 0,
            LatentSharing::PerDatum => i * k,
        };
        for (kk, a) in atoms.iter_mut().enumerate() {
            *a = log_kernel(params, base + kk, x);
        }
        let max = atoms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max.is_nan() || max < UNDERFLOW_LOG {
            return Err(SiviError::ObjectiveUnderflow { index: i });
        }
        let sivi = softmax_in_place(&mut atoms) - log_k;
        let (value, resp) = match fam.tail() {
            None => (sivi, 1.0),
            Some(t) => {
                let a = (1.0 - t.weight).ln() + sivi;
                let b = t.weight.ln() + t.dist.log_pdf(x[0]);
                let m = a.max(b);
                let lse = m + ((a - m).exp() + (b - m).exp()).ln();
                (lse, (a - lse).exp())
            }
        };
        total += value;
        let w = resp / n as f64;
        for (kk, &omega) in atoms.iter().enumerate() {
            if omega > 0.0 {
                cot.add_kernel_term(params, base + kk, x, w * omega);
            }
        }
    }
    let grad = cot.pull_back(fam, &traced)?;
    Ok(ObjectiveValue {
        value: total / n as f64,
        grad,
    })
}

/// Unnormalized log posterior `log p(theta, X)` with its gradient in `theta`.
pub trait LogJoint: Sync {
    fn dim(&self) -> usize;
    fn log_joint_and_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)>;
}

/// Configuration of the posterior surrogate
/// `log p(theta, X) - log((1/(K+1)) sum_{k=0..K} k(theta | z_k))`, `z_0` being
/// the latent that generated `theta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorObjective {
    pub k: usize,
    /// Reparameterized draws averaged per step.
    pub outer_samples: usize,
    pub sharing: LatentSharing,
}

pub fn posterior_objective(
    fam: &SiviFamily,
    model: &dyn LogJoint,
    cfg: &PosteriorObjective,
    rng: &mut Rng,
) -> Result<ObjectiveValue> {
    if fam.tail().is_some() {
        return Err(SiviError::InvalidConfig(
            "posterior objective does not support a tail component".into(),
        ));
    }
    if model.dim() != fam.dim() {
        return Err(SiviError::DimensionMismatch {
            expected: fam.dim(),
            found: model.dim(),
        });
    }
    let b = cfg.outer_samples;
    if b == 0 {
        return Err(SiviError::InvalidConfig("outer_samples must be at least 1".into()));
    }
    let k = cfg.k;
    let d = fam.dim();
    let atom_rows = match cfg.sharing {
        LatentSharing::Shared => k,
        LatentSharing::PerDatum => b * k,
    };
    let rows = b + atom_rows;
    let z = fam.draw_latents(rng, rows);
    let eps = rng.standard_normal_array(&[b, d]);
    let traced = fam.kernel_params_traced(&z)?;
    let params = &traced.params;
    let mut cot = KernelCotangents::new(rows, d);
    let log_k1 = ((k + 1) as f64).ln();
    let inv_b = 1.0 / b as f64;
    let mut total = 0.0;
    let mut idx = Vec::with_capacity(k + 1);
    let mut atoms = Vec::with_capacity(k + 1);
    let mut theta = vec![0.0; d];
    for s in 0..b {
        let (mu0, sig0, e) = (params.mu.row(s), params.sigma.row(s), eps.row(s));
        for j in 0..d {
            theta[j] = mu0[j] + sig0[j] * e[j];
        }
        idx.clear();
        idx.push(s);
        let base = b + match cfg.sharing {
            LatentSharing::Shared => 0,
            LatentSharing::PerDatum => s * k,
        };
        idx.extend(base..base + k);
        atoms.clear();
        atoms.extend(idx.iter().map(|&r| log_kernel(params, r, &theta)));
        let (lp, glp) = model.log_joint_and_grad(&theta)?;
        if !lp.is_finite() {
            return Err(SiviError::NonFiniteLikelihood { index: s });
        }
        let log_q = softmax_in_place(&mut atoms) - log_k1;
        total += lp - log_q;
        // d/dtheta of the whole term, then the reparameterization path.
        let mut g_theta = glp;
        for (&r, &omega) in idx.iter().zip(&atoms) {
            let (mu, sg) = (params.mu.row(r), params.sigma.row(r));
            for j in 0..d {
                g_theta[j] += omega * (theta[j] - mu[j]) / (sg[j] * sg[j]);
            }
            cot.add_kernel_term(params, r, &theta, -inv_b * omega);
        }
        let cm = cot.mu.row_mut(s);
        for j in 0..d {
            cm[j] += inv_b * g_theta[j];
        }
        let cs = cot.sigma.row_mut(s);
        for j in 0..d {
            cs[j] += inv_b * g_theta[j] * e[j];
        }
    }
    let grad = cot.pull_back(fam, &traced)?;
    Ok(ObjectiveValue {
        value: total * inv_b,
        grad,
    })
}

/// Gaussian likelihood with known unit noise and a Gaussian prior on the mean;
/// the posterior is Gaussian in closed form.
#[derive(Debug, Clone, PartialEq)]
pub struct ConjugateGaussianModel {
    pub prior_mean: Vec<f64>,
    pub prior_var: f64,
    pub noise_var: f64,
    pub data: RealArray,
}

impl ConjugateGaussianModel {
    pub fn posterior(&self) -> (Vec<f64>, f64) {
        let n = self.data.rows() as f64;
        let prec = 1.0 / self.prior_var + n / self.noise_var;
        let var = 1.0 / prec;
        let mean = (0..self.prior_mean.len())
            .map(|j| {
                let sum: f64 = self.data.row_iter().map(|r| r[j]).sum();
                var * (self.prior_mean[j] / self.prior_var + sum / self.noise_var)
            })
            .collect();
        (mean, var)
    }
}

impl LogJoint for ConjugateGaussianModel {
    fn dim(&self) -> usize {
        self.prior_mean.len()
    }

    fn log_joint_and_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let d = self.dim();
        let mut lp = 0.0;
        let mut g = vec![0.0; d];
        for j in 0..d {
            let r = theta[j] - self.prior_mean[j];
            lp -= 0.5 * r * r / self.prior_var + 0.5 * (2.0 * std::f64::consts::PI * self.prior_var).ln();
            g[j] -= r / self.prior_var;
        }
        for x in self.data.row_iter() {
            for j in 0..d {
                let r = x[j] - theta[j];
                lp -= 0.5 * r * r / self.noise_var + 0.5 * (2.0 * std::f64::consts::PI * self.noise_var).ln();
                g[j] += r / self.noise_var;
            }
        }
        Ok((lp, g))
    }
}
