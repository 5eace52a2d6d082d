use std::f64::consts::PI;

use crate::dists::StudentT1D;
use crate::error::{Result, SiviError};
use crate::ndcore::{DenseNet, ForwardTrace, RealArray, Rng};

/// Below this (natural log) value an atom counts as underflowed.
pub const UNDERFLOW_LOG: f64 = -745.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Fixed heavy-tailed mixture component `alpha * t_nu` (one-dimensional families only).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailComponent {
    pub weight: f64,
    pub dist: StudentT1D,
}

impl TailComponent {
    pub fn student_t5(weight: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&weight) {
            return Err(SiviError::InvalidConfig(format!(
                "tail weight must lie in [0, 1], got {weight}"
            )));
        }
        Ok(Self {
            weight,
            dist: StudentT1D::new(5.0)?,
        })
    }
}

/// Architecture of a family built from scratch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FamilyShape {
    pub latent_dim: usize,
    pub dim: usize,
    pub width: usize,
    pub variance_floor: f64,
}

/// Semi-implicit family `q(theta) = E_{z ~ N(0, I)} N(theta; mu(z), diag sigma(z)^2)`,
/// optionally mixed with a fixed Student-t tail.
#[derive(Debug, Clone)]
pub struct SiviFamily {
    latent_dim: usize,
    dim: usize,
    mu_net: DenseNet,
    log_scale_net: DenseNet,
    variance_floor: f64,
    tail: Option<TailComponent>,
}

/// Conditional kernel parameters for a batch of latent points.
#[derive(Debug, Clone)]
pub struct KernelParams {
    pub mu: RealArray,
    /// Raw log-scale network output.
    pub log_scale: RealArray,
    pub sigma: RealArray,
}

#[derive(Debug, Clone)]
pub(crate) struct TracedKernel {
    pub params: KernelParams,
    pub mu_trace: ForwardTrace,
    pub scale_trace: ForwardTrace,
}

/// One reparameterized draw `theta = mu(z) + sigma(z) * eps`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReparamSample {
    pub z: Vec<f64>,
    pub eps: Vec<f64>,
    pub theta: Vec<f64>,
    pub log_kernel: f64,
}

/// Result of a Monte Carlo marginal log-density estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginalEstimate {
    pub log_density: f64,
    /// Every kernel atom was below [`UNDERFLOW_LOG`]; `log_density` is `-inf`.
    pub underflow: bool,
}

/// Kernel parameters for a fixed set of latent draws, reused across many
/// evaluation points (common random numbers).
#[derive(Debug, Clone)]
pub struct LatentBank {
    z: RealArray,
    mu: RealArray,
    inv_var: RealArray,
    /// `-sum_j log sigma_j - d/2 log(2 pi)` per atom.
    log_norm: Vec<f64>,
}

impl LatentBank {
    pub fn len(&self) -> usize {
        self.log_norm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_norm.is_empty()
    }

    pub fn latents(&self) -> &RealArray {
        &self.z
    }

    /// Kernel means, one row per atom.
    pub fn means(&self) -> &RealArray {
        &self.mu
    }

    /// Kernel variances `sigma(z_k)^2`, one row per atom.
    pub fn variances(&self) -> RealArray {
        let mut v = self.inv_var.clone();
        for x in v.data_mut() {
            *x = 1.0 / *x;
        }
        v
    }

    /// Log kernel density of `x` under atom `k`.
    #[inline]
    pub fn log_kernel(&self, k: usize, x: &[f64]) -> f64 {
        let mu = self.mu.row(k);
        let iv = self.inv_var.row(k);
        let mut q = 0.0;
        for j in 0..x.len() {
            let d = x[j] - mu[j];
            q += d * d * iv[j];
        }
        self.log_norm[k] - 0.5 * q
    }

    /// `log((1/M) sum_k k(x | z_k))` computed entirely in log space, with no
    /// underflow cutoff.
    pub fn log_mean_kernel_raw(&self, x: &[f64], scratch: &mut Vec<f64>) -> f64 {
        scratch.clear();
        let mut max = f64::NEG_INFINITY;
        for k in 0..self.len() {
            let a = self.log_kernel(k, x);
            max = max.max(a);
            scratch.push(a);
        }
        if max == f64::NEG_INFINITY {
            return max;
        }
        let s: f64 = scratch.iter().map(|a| (a - max).exp()).sum();
        max + (s / self.len() as f64).ln()
    }

    /// As [`log_mean_kernel_raw`](Self::log_mean_kernel_raw), but `-inf` with the
    /// underflow flag when every atom is below [`UNDERFLOW_LOG`].
    pub fn log_mean_kernel(&self, x: &[f64], scratch: &mut Vec<f64>) -> MarginalEstimate {
        let v = self.log_mean_kernel_raw(x, scratch);
        let max = scratch.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max < UNDERFLOW_LOG {
            return MarginalEstimate {
                log_density: f64::NEG_INFINITY,
                underflow: true,
            };
        }
        MarginalEstimate {
            log_density: v,
            underflow: false,
        }
    }
}

impl SiviFamily {
    /// Fresh family with He-initialized two-hidden-layer networks.
    pub fn new(shape: FamilyShape, rng: &mut Rng) -> Result<Self> {
        let mu_net = DenseNet::two_hidden(shape.latent_dim, shape.width, shape.dim, rng)?;
        let log_scale_net = DenseNet::two_hidden(shape.latent_dim, shape.width, shape.dim, rng)?;
        Self::from_nets(mu_net, log_scale_net, shape.variance_floor)
    }

    pub fn from_nets(mu_net: DenseNet, log_scale_net: DenseNet, variance_floor: f64) -> Result<Self> {
        if mu_net.input_dim() != log_scale_net.input_dim() {
            return Err(SiviError::DimensionMismatch {
                expected: mu_net.input_dim(),
                found: log_scale_net.input_dim(),
            });
        }
        if mu_net.output_dim() != log_scale_net.output_dim() {
            return Err(SiviError::DimensionMismatch {
                expected: mu_net.output_dim(),
                found: log_scale_net.output_dim(),
            });
        }
        if !(variance_floor >= 0.0 && variance_floor.is_finite()) {
            return Err(SiviError::InvalidConfig(format!(
                "variance floor must be >= 0, got {variance_floor}"
            )));
        }
        Ok(Self {
            latent_dim: mu_net.input_dim(),
            dim: mu_net.output_dim(),
            mu_net,
            log_scale_net,
            variance_floor,
            tail: None,
        })
    }

    pub fn with_tail(mut self, tail: TailComponent) -> Result<Self> {
        if self.dim != 1 {
            return Err(SiviError::InvalidConfig(
                "tail component requires a one-dimensional family".into(),
            ));
        }
        if tail.weight >= 1.0 {
            self.tail = Some(tail);
            return Ok(self);
        }
        self.tail = Some(tail);
        Ok(self)
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn variance_floor(&self) -> f64 {
        self.variance_floor
    }

    pub fn tail(&self) -> Option<&TailComponent> {
        self.tail.as_ref()
    }

    pub fn mu_net(&self) -> &DenseNet {
        &self.mu_net
    }

    pub fn mu_net_mut(&mut self) -> &mut DenseNet {
        &mut self.mu_net
    }

    pub fn log_scale_net(&self) -> &DenseNet {
        &self.log_scale_net
    }

    pub fn log_scale_net_mut(&mut self) -> &mut DenseNet {
        &mut self.log_scale_net
    }

    pub fn num_params(&self) -> usize {
        self.mu_net.num_params() + self.log_scale_net.num_params()
    }

    /// Flat parameters: mean network first, then log-scale network.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.mu_net.params();
        p.extend(self.log_scale_net.params());
        p
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(SiviError::DimensionMismatch {
                expected: self.num_params(),
                found: params.len(),
            });
        }
        let split = self.mu_net.num_params();
        self.mu_net.set_params(&params[..split])?;
        self.log_scale_net.set_params(&params[split..])
    }

    /// Floored scale `sigma = sqrt(exp(2 s) + sigma2_min)` for a raw log-scale `s`.
    #[inline]
    pub fn floored_scale(&self, log_scale: f64) -> f64 {
        if self.variance_floor == 0.0 {
            log_scale.exp()
        } else {
            ((2.0 * log_scale).exp() + self.variance_floor).sqrt()
        }
    }

    /// `d sigma / d s` at a raw log-scale `s` with realized scale `sigma`.
    #[inline]
    pub(crate) fn scale_derivative(&self, log_scale: f64, sigma: f64) -> f64 {
        if self.variance_floor == 0.0 {
            sigma
        } else {
            (2.0 * log_scale).exp() / sigma
        }
    }

    fn check_latents(&self, z: &RealArray) -> Result<()> {
        if z.cols() != self.latent_dim {
            return Err(SiviError::DimensionMismatch {
                expected: self.latent_dim,
                found: z.cols(),
            });
        }
        Ok(())
    }

    pub fn kernel_params(&self, z: &RealArray) -> Result<KernelParams> {
        self.check_latents(z)?;
        let mu = self.mu_net.forward(z)?;
        let log_scale = self.log_scale_net.forward(z)?;
        let sigma = self.floor_all(&log_scale);
        Ok(KernelParams { mu, log_scale, sigma })
    }

    pub(crate) fn kernel_params_traced(&self, z: &RealArray) -> Result<TracedKernel> {
        self.check_latents(z)?;
        let mu_trace = self.mu_net.forward_traced(z)?;
        let scale_trace = self.log_scale_net.forward_traced(z)?;
        let log_scale = scale_trace.output().clone();
        let sigma = self.floor_all(&log_scale);
        Ok(TracedKernel {
            params: KernelParams {
                mu: mu_trace.output().clone(),
                log_scale,
                sigma,
            },
            mu_trace,
            scale_trace,
        })
    }

    fn floor_all(&self, log_scale: &RealArray) -> RealArray {
        let mut sigma = log_scale.clone();
        for v in sigma.data_mut() {
            *v = self.floored_scale(*v);
        }
        sigma
    }

    /// Per-coordinate conditional standard deviations `sigma(z)` for a batch of latents.
    pub fn enforce_variance_floor(&self, z: &RealArray) -> Result<RealArray> {
        Ok(self.kernel_params(z)?.sigma)
    }

    pub fn draw_latents(&self, rng: &mut Rng, count: usize) -> RealArray {
        rng.standard_normal_array(&[count, self.latent_dim])
    }

    pub fn latent_bank(&self, rng: &mut Rng, count: usize) -> Result<LatentBank> {
        let z = self.draw_latents(rng, count);
        self.latent_bank_from(z)
    }

    pub fn latent_bank_from(&self, z: RealArray) -> Result<LatentBank> {
        let KernelParams { mu, sigma, .. } = self.kernel_params(&z)?;
        let d = self.dim as f64;
        let log_norm = sigma
            .row_iter()
            .map(|s| -s.iter().map(|v| v.ln()).sum::<f64>() - d * HALF_LN_2PI)
            .collect();
        let mut inv_var = sigma;
        for v in inv_var.data_mut() {
            *v = 1.0 / (*v * *v);
        }
        Ok(LatentBank {
            z,
            mu,
            inv_var,
            log_norm,
        })
    }

    /// Mixes a semi-implicit log-density estimate with the tail component, if any.
    pub fn mix_tail(&self, sivi_part: MarginalEstimate, x: &[f64]) -> MarginalEstimate {
        match &self.tail {
            None => sivi_part,
            Some(t) if t.weight >= 1.0 => MarginalEstimate {
                log_density: t.dist.log_pdf(x[0]),
                underflow: false,
            },
            Some(t) => {
                let a = (1.0 - t.weight).ln() + sivi_part.log_density;
                let b = t.weight.ln() + t.dist.log_pdf(x[0]);
                let m = a.max(b);
                let log_density = if m == f64::NEG_INFINITY {
                    m
                } else {
                    m + ((a - m).exp() + (b - m).exp()).ln()
                };
                MarginalEstimate {
                    log_density,
                    underflow: !log_density.is_finite(),
                }
            }
        }
    }

    /// Marginal log-density estimate at `x` using a precomputed latent bank.
    pub fn log_marginal_with_bank(&self, bank: &LatentBank, x: &[f64], scratch: &mut Vec<f64>) -> MarginalEstimate {
        let only_tail = self.tail.is_some_and(|t| t.weight >= 1.0);
        let part = if only_tail {
            MarginalEstimate {
                log_density: f64::NEG_INFINITY,
                underflow: false,
            }
        } else {
            bank.log_mean_kernel(x, scratch)
        };
        self.mix_tail(part, x)
    }

    /// Log-space marginal estimate without the underflow cutoff; used by
    /// divergence estimators, which need `log q` far in the tails.
    pub fn log_marginal_raw_with_bank(&self, bank: &LatentBank, x: &[f64], scratch: &mut Vec<f64>) -> f64 {
        let only_tail = self.tail.is_some_and(|t| t.weight >= 1.0);
        let log_density = if only_tail {
            f64::NEG_INFINITY
        } else {
            bank.log_mean_kernel_raw(x, scratch)
        };
        self.mix_tail(
            MarginalEstimate {
                log_density,
                underflow: false,
            },
            x,
        )
        .log_density
    }

    /// `log((1/K) sum_k k(x | z_k))` with fresh `z_k ~ r`.
    pub fn marginal_log_density_mc(&self, x: &[f64], k: usize, rng: &mut Rng) -> Result<MarginalEstimate> {
        if k == 0 {
            return Err(SiviError::InvalidConfig("K must be at least 1".into()));
        }
        if x.len() != self.dim {
            return Err(SiviError::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        let bank = self.latent_bank(rng, k)?;
        Ok(self.log_marginal_with_bank(&bank, x, &mut Vec::with_capacity(k)))
    }

    /// Draws from the marginal `q`: `z ~ r`, `theta ~ k(. | z)`, or with
    /// probability `alpha` from the tail component.
    pub fn sample_marginal(&self, rng: &mut Rng, count: usize) -> Result<RealArray> {
        let batch = self.sample_reparam_batch(rng, count)?;
        let mut theta = batch.theta;
        if let Some(t) = &self.tail {
            for i in 0..count {
                if rng.uniform() < t.weight {
                    theta.row_mut(i)[0] = t.dist.draw(rng);
                }
            }
        }
        Ok(theta)
    }

    /// Reparameterized kernel draws (the tail component is ignored).
    pub fn sample_reparam(&self, rng: &mut Rng, count: usize) -> Result<Vec<ReparamSample>> {
        let b = self.sample_reparam_batch(rng, count)?;
        Ok((0..count)
            .map(|i| ReparamSample {
                z: b.z.row(i).to_vec(),
                eps: b.eps.row(i).to_vec(),
                theta: b.theta.row(i).to_vec(),
                log_kernel: b.log_kernel[i],
            })
            .collect())
    }

    fn sample_reparam_batch(&self, rng: &mut Rng, count: usize) -> Result<ReparamBatch> {
        let z = self.draw_latents(rng, count);
        let eps = rng.standard_normal_array(&[count, self.dim]);
        let KernelParams { mu, sigma, .. } = self.kernel_params(&z)?;
        let mut theta = mu;
        let mut log_kernel = Vec::with_capacity(count);
        for i in 0..count {
            let (s, e) = (sigma.row(i), eps.row(i));
            let mut lk = -(self.dim as f64) * HALF_LN_2PI;
            for (j, t) in theta.row_mut(i).iter_mut().enumerate() {
                *t += s[j] * e[j];
                lk -= s[j].ln() + 0.5 * e[j] * e[j];
            }
            log_kernel.push(lk);
        }
        Ok(ReparamBatch {
            z,
            eps,
            theta,
            log_kernel,
        })
    }
}

struct ReparamBatch {
    z: RealArray,
    eps: RealArray,
    theta: RealArray,
    log_kernel: Vec<f64>,
}

/// Log density of `N(x; mu, diag sigma^2)`.
pub fn diag_normal_log_pdf(x: &[f64], mu: &[f64], sigma: &[f64]) -> f64 {
    x.iter()
        .zip(mu)
        .zip(sigma)
        .map(|((x, m), s)| -0.5 * (2.0 * PI).ln() - s.ln() - 0.5 * ((x - m) / s).powi(2))
        .sum()
}
