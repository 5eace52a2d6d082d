use rayon::prelude::*;

use super::common::{
    finite_median, fit_density, params_finite, positive_log_log_slope, FitSpec, MarginalEvaluator, TaskTimer,
};
use super::config::{Exp1Config, ExperimentId};
use super::record::{params, ExperimentRecord};
use super::ExperimentOutput;
use crate::dists::{Density, TruncatedGaussian2D};
use crate::error::Result;
use crate::metrics::{tv_grid_with_error, tv_sampling, GridSpec};
use crate::ndcore::Rng;
use crate::sivi::{FamilyShape, SiviFamily};

pub(crate) const METRICS: &[&str] = &[
    "tv_grid",
    "tv_sampling",
    "final_objective",
    "validation_objective",
    "iterations_run",
    "skipped_steps",
    "diverged",
    "tv_grid_median",
    "tv_sampling_median",
    "tv_grid_slope",
    "tv_sampling_slope",
];

const ID: ExperimentId = ExperimentId::Exp1;

fn run_task(cfg: &Exp1Config, width: usize, seed: u64, rng: &Rng, timings: bool) -> Result<Vec<ExperimentRecord>> {
    let timer = TaskTimer::start(timings);
    let target = TruncatedGaussian2D::standard();
    let mut data_rng = rng.split_labeled("data").split(seed);
    let train = target.sample(&mut data_rng, cfg.train_size)?;
    let validation = target.sample(&mut data_rng, cfg.validation_size.max(1))?;

    let mut fit_rng = rng.split_labeled(&format!("fit-w{width}")).split(seed);
    let mut fam = SiviFamily::new(
        FamilyShape {
            latent_dim: cfg.latent_dim,
            dim: 2,
            width,
            variance_floor: 0.0,
        },
        &mut fit_rng,
    )?;
    let spec = FitSpec {
        k: cfg.k,
        iterations: cfg.iterations,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        early_stopping: cfg.early_stopping,
    };
    let report = fit_density(&mut fam, &train, Some(&validation), &spec, &mut fit_rng)?;

    let (grid_tv, sampling_tv) = if params_finite(&fam) {
        let mut eval_rng = rng.split_labeled(&format!("eval-w{width}")).split(seed);
        let ev = MarginalEvaluator::new(&fam, cfg.eval_atoms, &mut eval_rng)?;
        let grid = GridSpec::square(-cfg.grid_half_width, cfg.grid_half_width, cfg.grid_cells)?;
        let g = tv_grid_with_error(|x| target.density(x), |x| ev.q(x), &grid)?;
        let mut sample_rng = rng.split_labeled("tv-samples").split(seed);
        let s = tv_sampling(&target, |x| ev.log_q(x), cfg.tv_samples, &mut sample_rng)?;
        ((g.0, g.1), (s.value, s.stderr))
    } else {
        ((f64::NAN, f64::NAN), (f64::NAN, f64::NAN))
    };

    let p = params([("W", width.into())]);
    let secs = timer.seconds();
    let rec =
        |metric: &str, value: f64| ExperimentRecord::new(ID, Some(seed), p.clone(), metric, value).with_seconds(secs);
    Ok(vec![
        rec("tv_grid", grid_tv.0).with_stderr(grid_tv.1),
        rec("tv_sampling", sampling_tv.0).with_stderr(sampling_tv.1),
        rec("final_objective", report.final_objective),
        rec("validation_objective", report.best_validation.unwrap_or(f64::NAN)),
        rec("iterations_run", report.iterations_run as f64),
        rec("skipped_steps", report.skipped_steps as f64),
        rec("diverged", f64::from(u8::from(report.diverged))),
    ])
}

/// TV between the truncated planar Gaussian and density-fit SIVI across
/// network widths; CRN data per seed are shared across widths.
pub fn run_exp1(cfg: &Exp1Config, rng: &Rng, timings: bool) -> Result<ExperimentOutput> {
    let tasks: Vec<(usize, u64)> = cfg
        .widths
        .iter()
        .flat_map(|&w| (0..cfg.seeds as u64).map(move |s| (w, s)))
        .collect();
    let per_task = tasks
        .par_iter()
        .map(|&(w, s)| run_task(cfg, w, s, rng, timings))
        .collect::<Result<Vec<_>>>()?;
    let mut records: Vec<ExperimentRecord> = per_task.into_iter().flatten().collect();

    let widths: Vec<f64> = cfg.widths.iter().map(|&w| w as f64).collect();
    for (metric, agg) in [("tv_grid", "tv_grid_median"), ("tv_sampling", "tv_sampling_median")] {
        let medians: Vec<f64> = cfg
            .widths
            .iter()
            .map(|&w| {
                let v: Vec<f64> = records
                    .iter()
                    .filter(|r| r.metric == metric && r.param_f64("W") == Some(w as f64))
                    .map(|r| r.value)
                    .collect();
                finite_median(&v)
            })
            .collect();
        for (&w, &m) in cfg.widths.iter().zip(&medians) {
            records.push(ExperimentRecord::new(ID, None, params([("W", w.into())]), agg, m));
        }
        let slope_metric = if metric == "tv_grid" {
            "tv_grid_slope"
        } else {
            "tv_sampling_slope"
        };
        records.push(ExperimentRecord::new(
            ID,
            None,
            params([]),
            slope_metric,
            positive_log_log_slope(&widths, &medians),
        ));
    }
    super::record::sort_records(&mut records);
    Ok(ExperimentOutput {
        records,
        aux: Vec::new(),
    })
}
