//! Evaluators for the branch-collapse bound, the tail-mismatch Bernoulli-KL
//! lower bound, and the finite-`K` bias of the marginal log-density estimate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dists::{normal_cdf, student_t_tail};
use crate::error::{Result, SiviError};
use crate::ndcore::{log_log_slope, mean_and_stderr, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchBoundInput {
    /// Mode separation `a`.
    pub separation: f64,
    /// Window factor `r`.
    pub window: f64,
    /// Within-branch scale `s`.
    pub scale: f64,
    /// Variance floor `v0`.
    pub variance_floor: f64,
}

/// `clamp(2 Phi(-(a/2 - r s) / sqrt(v0)), 0, 1)`.
pub fn branch_bound(input: &BranchBoundInput) -> f64 {
    let z = -(0.5 * input.separation - input.window * input.scale) / input.variance_floor.sqrt();
    (2.0 * normal_cdf(z)).clamp(0.0, 1.0)
}

/// `KL(Bern(p) || Bern(q))` with `0 log 0 = 0`.
pub fn bernoulli_kl(p: f64, q: f64) -> f64 {
    let term = |a: f64, b: f64| {
        if a == 0.0 {
            0.0
        } else if b == 0.0 {
            f64::INFINITY
        } else {
            a * (a / b).ln()
        }
    };
    (term(p, q) + term(1.0 - p, 1.0 - q)).max(0.0)
}

/// Upper-tail functions of a target and of an envelope dominating every
/// member of the approximating family, on a threshold grid.
pub struct OrliczProbe<'a> {
    pub target_tail: Box<dyn Fn(f64) -> f64 + Sync + 'a>,
    pub envelope_tail: Box<dyn Fn(f64) -> f64 + Sync + 'a>,
    pub thresholds: Vec<f64>,
}

impl OrliczProbe<'static> {
    /// Student-t target against a centred Gaussian envelope of variance `sigma2_max`.
    pub fn student_vs_gaussian(nu: f64, sigma2_max: f64, thresholds: Vec<f64>) -> Self {
        Self {
            target_tail: Box::new(move |t| student_t_tail(nu, t)),
            envelope_tail: Box::new(gaussian_upper_tail(sigma2_max)),
            thresholds,
        }
    }
}

pub fn gaussian_upper_tail(var: f64) -> impl Fn(f64) -> f64 + Sync {
    let sd = var.sqrt();
    move |t| normal_cdf(-t / sd)
}

/// `points` log-spaced thresholds on `[lower, upper]`.
pub fn log_spaced(lower: f64, upper: f64, points: usize) -> Vec<f64> {
    let (a, b) = (lower.ln(), upper.ln());
    (0..points)
        .map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp())
        .collect()
}

/// The default threshold grid: 200 log-spaced points on `[1, 50]`.
pub fn default_thresholds() -> Vec<f64> {
    log_spaced(1.0, 50.0, 200)
}

/// `max_t KL(Bern(p_t) || Bern(qbar_t))` over thresholds where the target tail
/// exceeds the envelope; 0 when it never does.
pub fn orlicz_kl_lower_bound(probe: &OrliczProbe<'_>) -> f64 {
    probe
        .thresholds
        .iter()
        .map(|&t| {
            let (p, q) = ((probe.target_tail)(t), (probe.envelope_tail)(t));
            if p > q {
                bernoulli_kl(p, q)
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KBias {
    pub k: usize,
    /// `log q(x) - mean estimate`, panel-averaged.
    pub bias: f64,
    pub stderr: f64,
    /// Same expectation via `E[S - 1 - log S]` with `S = qhat / q`; pointwise non-negative.
    pub cv_bias: f64,
    pub cv_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnisProbe {
    pub lambda: f64,
    pub panel: Vec<f64>,
    pub replications: usize,
    pub per_k: Vec<KBias>,
    /// Least-squares slope of `log bias` against `log K` (control-variate estimates).
    pub slope: f64,
}

pub const MIN_PROBE_REPLICATIONS: usize = 100;

/// Finite-`K` bias of `log((1/K) sum_k phi(x - lambda z_k))` for the affine
/// family `N(lambda z, 1)`, whose marginal is `N(0, 1 + lambda^2)`.
///
/// Latents are nested across `K` within a replication (paired streams), and
/// replication `r` uses `rng.split(r)`.
pub fn snis_bias_probe(
    lambda: f64,
    panel: &[f64],
    k_grid: &[usize],
    replications: usize,
    rng: &Rng,
) -> Result<SnisProbe> {
    if replications < MIN_PROBE_REPLICATIONS {
        return Err(SiviError::InsufficientSamples(format!(
            "bias probe needs at least {MIN_PROBE_REPLICATIONS} replications, got {replications}"
        )));
    }
    if panel.is_empty() || k_grid.is_empty() || k_grid.contains(&0) {
        return Err(SiviError::InvalidConfig(
            "panel and K grid must be non-empty with K >= 1".into(),
        ));
    }
    let kmax = *k_grid.iter().max().unwrap_or(&1);
    let var = 1.0 + lambda * lambda;
    let log_q: Vec<f64> = panel
        .iter()
        .map(|x| -0.5 * (2.0 * std::f64::consts::PI * var).ln() - 0.5 * x * x / var)
        .collect();
    let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    // rows: replication; columns: (plain, cv) per K
    let per_rep: Vec<Vec<(f64, f64)>> = (0..replications)
        .into_par_iter()
        .map(|r| {
            let mut g = rng.split(r as u64);
            let z: Vec<f64> = (0..kmax).map(|_| g.standard_normal()).collect();
            k_grid
                .iter()
                .map(|&k| {
                    let (mut plain, mut cv) = (0.0, 0.0);
                    for (x, lq) in panel.iter().zip(&log_q) {
                        // ratio S = mean_k phi(x - lambda z_k) / q(x)
                        let s: f64 = z[..k]
                            .iter()
                            .map(|zk| {
                                let d = x - lambda * zk;
                                (-0.5 * d * d - half_ln_2pi - lq).exp()
                            })
                            .sum::<f64>()
                            / k as f64;
                        let log_s = s.ln();
                        plain -= log_s;
                        cv += s - 1.0 - log_s;
                    }
                    (plain / panel.len() as f64, cv / panel.len() as f64)
                })
                .collect()
        })
        .collect();
    let per_k: Vec<KBias> = k_grid
        .iter()
        .enumerate()
        .map(|(j, &k)| {
            let plain: Vec<f64> = per_rep.iter().map(|v| v[j].0).collect();
            let cv: Vec<f64> = per_rep.iter().map(|v| v[j].1).collect();
            let (bias, stderr) = mean_and_stderr(&plain);
            let (cv_bias, cv_stderr) = mean_and_stderr(&cv);
            KBias {
                k,
                bias,
                stderr,
                cv_bias,
                cv_stderr,
            }
        })
        .collect();
    let ks: Vec<f64> = per_k.iter().map(|b| b.k as f64).collect();
    let bs: Vec<f64> = per_k.iter().map(|b| b.cv_bias).collect();
    Ok(SnisProbe {
        lambda,
        panel: panel.to_vec(),
        replications,
        slope: log_log_slope(&ks, &bs),
        per_k,
    })
}
