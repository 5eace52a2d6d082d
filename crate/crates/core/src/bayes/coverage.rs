use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::laplace::{ellipsoid_covers, empirical_moments, laplace_fit, GaussianApprox};
use super::model::{generate_data, LinearGaussianPosterior, LogisticModel, LogisticPosterior};
use crate::error::{Result, SiviError};
use crate::ndcore::linalg::Cholesky;
use crate::ndcore::{AdamConfig, Rng};
use crate::sivi::{
    train_posterior, FamilyShape, LatentSharing, PosteriorObjective, SiviFamily, TrainConfig, TrainReport,
};

pub const CREDIBLE_LEVEL: f64 = 0.95;
pub const MIN_MOMENT_SAMPLES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiviPosteriorConfig {
    pub width: usize,
    pub k: usize,
    pub outer_samples: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub moment_samples: usize,
    pub variance_floor: f64,
}

impl Default for SiviPosteriorConfig {
    fn default() -> Self {
        Self {
            width: 64,
            k: 50,
            outer_samples: 1,
            iterations: 30_000,
            learning_rate: 1e-3,
            moment_samples: 100_000,
            variance_floor: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Approximator {
    Laplace,
    Sivi(SiviPosteriorConfig),
    /// Exact posterior of the linear-Gaussian stand-in model; calibrates the study itself.
    ExactConjugate,
}

impl Approximator {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Laplace => "laplace",
            Self::Sivi(_) => "sivi",
            Self::ExactConjugate => "exact_conjugate",
        }
    }
}

/// Trains a semi-implicit family (latent dimension `d`) on the logistic posterior.
pub fn fit_sivi_posterior(
    model: &LogisticModel,
    data: &super::model::Dataset,
    cfg: &SiviPosteriorConfig,
    rng: &mut Rng,
) -> Result<(SiviFamily, TrainReport)> {
    let d = model.dim();
    let mut fam = SiviFamily::new(
        FamilyShape {
            latent_dim: d,
            dim: d,
            width: cfg.width,
            variance_floor: cfg.variance_floor,
        },
        rng,
    )?;
    let post = LogisticPosterior { model, data };
    let objective = PosteriorObjective {
        k: cfg.k,
        outer_samples: cfg.outer_samples,
        sharing: LatentSharing::Shared,
    };
    let train = TrainConfig {
        iterations: cfg.iterations,
        batch_size: data.len().max(1),
        adam: AdamConfig::with_learning_rate(cfg.learning_rate),
        early_stopping: None,
    };
    let report = train_posterior(&mut fam, &post, &objective, &train, rng)?;
    Ok((fam, report))
}

/// Mean and covariance of `sample_count` marginal draws.
pub fn sivi_posterior_moments(fam: &SiviFamily, sample_count: usize, rng: &mut Rng) -> Result<GaussianApprox> {
    if sample_count < MIN_MOMENT_SAMPLES {
        return Err(SiviError::InsufficientSamples(format!(
            "posterior moments need at least {MIN_MOMENT_SAMPLES} draws, got {sample_count}"
        )));
    }
    let s = fam.sample_marginal(rng, sample_count)?;
    empirical_moments(&s, MIN_MOMENT_SAMPLES)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationOutcome {
    pub replication: usize,
    pub approx: Option<GaussianApprox>,
    pub covered: Option<bool>,
    pub failure: Option<String>,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageReport {
    pub approximator: &'static str,
    pub replications: usize,
    pub hits: usize,
    pub failures: usize,
    /// Failures are dropped from the denominator only when fewer than 5% of runs;
    /// otherwise they count as misses.
    pub coverage: f64,
    pub band: (f64, f64),
    pub outcomes: Vec<ReplicationOutcome>,
}

/// `0.95 +/- 1.96 sqrt(0.95 * 0.05 / reps)`.
pub fn binomial_band(level: f64, replications: usize) -> (f64, f64) {
    let half = 1.96 * (level * (1.0 - level) / replications as f64).sqrt();
    (level - half, level + half)
}

fn fit_one(model: &LogisticModel, n: usize, approximator: &Approximator, rep_rng: &Rng) -> Result<GaussianApprox> {
    let mut data_rng = rep_rng.split_labeled("data");
    match approximator {
        Approximator::Laplace => {
            let data = generate_data(model, n, &mut data_rng);
            laplace_fit(&LogisticPosterior { model, data: &data })
        }
        Approximator::Sivi(cfg) => {
            let data = generate_data(model, n, &mut data_rng);
            let mut fit_rng = rep_rng.split_labeled("fit");
            let (fam, report) = fit_sivi_posterior(model, &data, cfg, &mut fit_rng)?;
            if report.diverged {
                return Err(SiviError::TrainingDiverged {
                    iterations: report.iterations_run,
                });
            }
            sivi_posterior_moments(&fam, cfg.moment_samples, &mut fit_rng)
        }
        Approximator::ExactConjugate => {
            let data = LinearGaussianPosterior::generate(&model.theta_star, n, &mut data_rng);
            let post = LinearGaussianPosterior {
                prior_var: model.prior_var,
                data: &data,
            };
            let (prec, shift) = post.precision_and_shift();
            let chol = Cholesky::new(&prec, model.dim())?;
            let mut cov = chol.inverse();
            crate::ndcore::linalg::symmetrize(&mut cov, model.dim());
            GaussianApprox::new(chol.solve(&shift), cov)
        }
    }
}

/// Fresh data and fit per replication. Replication `r` always uses substream
/// `rng.split(r)`, so data are shared across approximators and nested across `n`.
pub fn coverage_study(
    model: &LogisticModel,
    n: usize,
    replications: usize,
    approximator: &Approximator,
    rng: &Rng,
) -> Result<CoverageReport> {
    if replications == 0 {
        return Err(SiviError::InvalidConfig("replications must be >= 1".into()));
    }
    let outcomes: Vec<ReplicationOutcome> = (0..replications)
        .into_par_iter()
        .map(|r| {
            let rep_rng = rng.split(r as u64);
            match fit_one(model, n, approximator, &rep_rng) {
                Ok(approx) => {
                    let covered = ellipsoid_covers(&approx, &model.theta_star, CREDIBLE_LEVEL).ok();
                    ReplicationOutcome {
                        replication: r,
                        approx: Some(approx),
                        covered,
                        failure: None,
                        diverged: false,
                    }
                }
                Err(e) => ReplicationOutcome {
                    replication: r,
                    approx: None,
                    covered: None,
                    failure: Some(e.to_string()),
                    diverged: matches!(e, SiviError::TrainingDiverged { .. }),
                },
            }
        })
        .collect();
    let hits = outcomes.iter().filter(|o| o.covered == Some(true)).count();
    let failures = outcomes.iter().filter(|o| o.covered.is_none()).count();
    let denominator = if (failures as f64) < 0.05 * replications as f64 {
        replications - failures
    } else {
        replications
    };
    let coverage = if denominator == 0 {
        0.0
    } else {
        hits as f64 / denominator as f64
    };
    Ok(CoverageReport {
        approximator: approximator.name(),
        replications,
        hits,
        failures,
        coverage,
        band: binomial_band(CREDIBLE_LEVEL, replications),
        outcomes,
    })
}
