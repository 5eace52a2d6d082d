use serde::{Deserialize, Serialize};

use super::family::SiviFamily;
use super::objective::{
    density_fit_objective, posterior_objective, LatentSharing, LogJoint, ObjectiveValue, PosteriorObjective,
};
use crate::error::{Result, SiviError};
use crate::ndcore::{AdamConfig, AdamState, RealArray, Rng};

/// Validation-based early stopping schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub every: usize,
    pub patience: usize,
    pub min_improvement: f64,
}

impl Default for EarlyStopping {
    fn default() -> Self {
        Self {
            every: 500,
            patience: 10,
            min_improvement: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub early_stopping: Option<EarlyStopping>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub iterations_run: usize,
    /// Mean objective over the last (up to) 100 successful steps.
    pub final_objective: f64,
    pub diverged: bool,
    pub stopped_early: bool,
    /// Steps discarded because some datum underflowed every kernel atom.
    pub skipped_steps: usize,
    pub best_validation: Option<f64>,
}

/// Runs Adam ascent on a stochastic objective.
///
/// `validate` is consulted on the early-stopping schedule; the parameters with
/// the best validation value are restored at the end.
pub fn optimize<F, V>(
    fam: &mut SiviFamily,
    cfg: &TrainConfig,
    rng: &mut Rng,
    mut objective: F,
    mut validate: Option<V>,
) -> Result<TrainReport>
where
    F: FnMut(&SiviFamily, &mut Rng) -> Result<ObjectiveValue>,
    V: FnMut(&SiviFamily) -> Result<f64>,
{
    let mut params = fam.params();
    let mut adam = AdamState::new(params.len(), cfg.adam);
    let mut recent = std::collections::VecDeque::with_capacity(100);
    let mut report = TrainReport {
        iterations_run: 0,
        final_objective: f64::NAN,
        diverged: false,
        stopped_early: false,
        skipped_steps: 0,
        best_validation: None,
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut stale = 0usize;
    for it in 0..cfg.iterations {
        report.iterations_run = it + 1;
        let ObjectiveValue { value, mut grad } = match objective(fam, rng) {
            Ok(v) => v,
            Err(SiviError::ObjectiveUnderflow { .. }) => {
                report.skipped_steps += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        if !value.is_finite() {
            report.diverged = true;
            break;
        }
        for g in grad.iter_mut() {
            *g = -*g;
        }
        if adam.step(&mut params, &grad).is_err() {
            report.diverged = true;
            break;
        }
        fam.set_params(&params)?;
        if recent.len() == 100 {
            recent.pop_front();
        }
        recent.push_back(value);

        if let (Some(es), Some(val)) = (cfg.early_stopping, validate.as_mut()) {
            if es.every > 0 && (it + 1) % es.every == 0 {
                let v = val(fam)?;
                match &best {
                    Some((b, _)) if v < b + es.min_improvement => {
                        stale += 1;
                        if v > *b {
                            best = Some((v, params.clone()));
                        }
                    }
                    _ => {
                        stale = 0;
                        best = Some((v, params.clone()));
                    }
                }
                if stale >= es.patience {
                    report.stopped_early = true;
                    break;
                }
            }
        }
    }
    if let Some((v, p)) = best {
        if !report.diverged {
            fam.set_params(&p)?;
        }
        report.best_validation = Some(v);
    }
    if !recent.is_empty() {
        report.final_objective = recent.iter().sum::<f64>() / recent.len() as f64;
    }
    Ok(report)
}

/// Draws a minibatch of rows uniformly with replacement.
pub fn minibatch(data: &RealArray, batch: usize, rng: &mut Rng) -> RealArray {
    let idx: Vec<usize> = (0..batch).map(|_| rng.index(data.rows())).collect();
    data.select_rows(&idx)
}

/// Held-out finite-`K` marginal objective evaluated with a fixed latent bank
/// per point block, so successive evaluations are directly comparable.
pub fn heldout_objective(fam: &SiviFamily, data: &RealArray, k: usize, seed: u64) -> Result<f64> {
    let mut rng = Rng::new(seed);
    let bank = fam.latent_bank(&mut rng, k)?;
    let mut scratch = Vec::with_capacity(k);
    let mut total = 0.0;
    for x in data.row_iter() {
        total += fam.log_marginal_raw_with_bank(&bank, x, &mut scratch);
    }
    Ok(total / data.rows() as f64)
}

/// Fits `fam` to samples of a target by maximizing the finite-`K` density-fit surrogate.
pub fn train_density_fit(
    fam: &mut SiviFamily,
    train: &RealArray,
    validation: Option<&RealArray>,
    k: usize,
    sharing: LatentSharing,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<TrainReport> {
    if train.rows() == 0 || cfg.batch_size == 0 {
        return Err(SiviError::InsufficientSamples(
            "training set and batch must be non-empty".into(),
        ));
    }
    let val_seed = rng.split_labeled("validation").seed();
    let validate = validation.map(|v| move |f: &SiviFamily| heldout_objective(f, v, k, val_seed));
    optimize(
        fam,
        cfg,
        rng,
        |f, r| {
            let batch = minibatch(train, cfg.batch_size, r);
            density_fit_objective(f, &batch, k, sharing, r)
        },
        validate,
    )
}

/// Fits `fam` to an unnormalized posterior with the semi-implicit surrogate.
pub fn train_posterior(
    fam: &mut SiviFamily,
    model: &dyn LogJoint,
    objective: &PosteriorObjective,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<TrainReport> {
    optimize(
        fam,
        cfg,
        rng,
        |f, r| posterior_objective(f, model, objective, r),
        None::<fn(&SiviFamily) -> Result<f64>>,
    )
}
