use rayon::prelude::*;

use super::common::{
    finite_median, fit_density, params_finite, positive_log_log_slope, FitSpec, MarginalEvaluator, TaskTimer,
};
use super::config::{Exp3Config, ExperimentId};
use super::record::{params, ExperimentRecord};
use super::ExperimentOutput;
use crate::dists::{Density, GaussianMixture};
use crate::error::Result;
use crate::metrics::{mode_ratio, tv_grid_with_error, GridSpec};
use crate::ndcore::Rng;
use crate::sivi::{FamilyShape, SiviFamily};

pub(crate) const METRICS: &[&str] = &[
    "mode_ratio",
    "tv_grid",
    "final_objective",
    "iterations_run",
    "skipped_steps",
    "diverged",
    "mode_ratio_median",
    "tv_grid_median",
    "tv_grid_slope",
];

const ID: ExperimentId = ExperimentId::Exp3;

fn run_task(cfg: &Exp3Config, k: usize, seed: u64, rng: &Rng, timings: bool) -> Result<Vec<ExperimentRecord>> {
    let timer = TaskTimer::start(timings);
    let target = GaussianMixture::symmetric_bimodal();
    let mut data_rng = rng.split_labeled("data").split(seed);
    let train = target.sample(&mut data_rng, cfg.train_size)?;

    let mut fit_rng = rng.split_labeled(&format!("fit-k{k}")).split(seed);
    let mut fam = SiviFamily::new(
        FamilyShape {
            latent_dim: 1,
            dim: 1,
            width: cfg.width,
            variance_floor: 0.0,
        },
        &mut fit_rng,
    )?;
    let spec = FitSpec {
        k,
        iterations: cfg.iterations,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        early_stopping: None,
    };
    let report = fit_density(&mut fam, &train, None, &spec, &mut fit_rng)?;

    let (ratio, tv) = if params_finite(&fam) {
        let mut eval_rng = rng.split_labeled(&format!("eval-k{k}")).split(seed);
        let draws = fam.sample_marginal(&mut eval_rng, cfg.mode_samples)?;
        let ratio = mode_ratio(draws.data())?;
        let ev = MarginalEvaluator::new(&fam, cfg.eval_atoms, &mut eval_rng)?;
        let grid = GridSpec::line(-cfg.grid_half_width, cfg.grid_half_width, cfg.grid_cells)?;
        (ratio, tv_grid_with_error(|x| target.density(x), |x| ev.q(x), &grid)?)
    } else {
        (f64::NAN, (f64::NAN, f64::NAN))
    };

    let p = params([("K", k.into())]);
    let secs = timer.seconds();
    let rec =
        |metric: &str, value: f64| ExperimentRecord::new(ID, Some(seed), p.clone(), metric, value).with_seconds(secs);
    Ok(vec![
        rec("mode_ratio", ratio),
        rec("tv_grid", tv.0).with_stderr(tv.1),
        rec("final_objective", report.final_objective),
        rec("iterations_run", report.iterations_run as f64),
        rec("skipped_steps", report.skipped_steps as f64),
        rec("diverged", f64::from(u8::from(report.diverged))),
    ])
}

/// Mode balance and TV of fits to the symmetric bimodal mixture as the number
/// of inner samples `K` grows.
pub fn run_exp3(cfg: &Exp3Config, rng: &Rng, timings: bool) -> Result<ExperimentOutput> {
    let tasks: Vec<(usize, u64)> = cfg
        .ks
        .iter()
        .flat_map(|&k| (0..cfg.seeds as u64).map(move |s| (k, s)))
        .collect();
    let per_task = tasks
        .par_iter()
        .map(|&(k, s)| run_task(cfg, k, s, rng, timings))
        .collect::<Result<Vec<_>>>()?;
    let mut records: Vec<ExperimentRecord> = per_task.into_iter().flatten().collect();

    let mut tv_medians = Vec::new();
    for &k in &cfg.ks {
        let p = params([("K", k.into())]);
        for (metric, agg) in [("mode_ratio", "mode_ratio_median"), ("tv_grid", "tv_grid_median")] {
            let v: Vec<f64> = records
                .iter()
                .filter(|r| r.metric == metric && r.params == p && r.seed.is_some())
                .map(|r| r.value)
                .collect();
            let m = finite_median(&v);
            if metric == "tv_grid" {
                tv_medians.push((k as f64, m));
            }
            records.push(ExperimentRecord::new(ID, None, p.clone(), agg, m));
        }
    }
    let (ks, tvs): (Vec<f64>, Vec<f64>) = tv_medians
        .into_iter()
        .filter(|(k, _)| *k <= cfg.slope_max_k as f64)
        .unzip();
    records.push(ExperimentRecord::new(
        ID,
        None,
        params([("max_K", cfg.slope_max_k.into())]),
        "tv_grid_slope",
        positive_log_log_slope(&ks, &tvs),
    ));
    super::record::sort_records(&mut records);
    Ok(ExperimentOutput {
        records,
        aux: Vec::new(),
    })
}
