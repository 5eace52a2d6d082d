use super::common::{finite_median, spearman, TaskTimer};
use super::config::{Exp6Config, ExperimentId};
use super::record::{params, ExperimentRecord, Params};
use super::ExperimentOutput;
use crate::bayes::{coverage_study, Approximator, CoverageReport, GaussianApprox, LogisticModel};
use crate::error::Result;
use crate::ndcore::Rng;

pub(crate) const METRICS: &[&str] = &[
    "coverage",
    "band_low",
    "band_high",
    "fit_failures",
    "rel_mean_error_median",
    "trace_median",
    "variance_ratio_median",
    "rel_error_spearman",
];

const ID: ExperimentId = ExperimentId::Exp6;

fn rel_mean_error(a: &GaussianApprox, truth: &[f64]) -> f64 {
    let num: f64 = a.mean.iter().zip(truth).map(|(m, t)| (m - t).powi(2)).sum();
    let den: f64 = truth.iter().map(|t| t * t).sum();
    (num / den).sqrt()
}

fn report_records(p: &Params, rep: &CoverageReport, truth: &[f64], secs: Option<f64>) -> Vec<ExperimentRecord> {
    let rec = |metric: &str, value: f64| ExperimentRecord::new(ID, None, p.clone(), metric, value).with_seconds(secs);
    let errs: Vec<f64> = rep
        .outcomes
        .iter()
        .filter_map(|o| o.approx.as_ref().map(|a| rel_mean_error(a, truth)))
        .collect();
    let traces: Vec<f64> = rep
        .outcomes
        .iter()
        .filter_map(|o| o.approx.as_ref().map(GaussianApprox::trace))
        .collect();
    let c = rep.coverage;
    vec![
        rec("coverage", c).with_stderr((c * (1.0 - c) / rep.replications as f64).sqrt()),
        rec("band_low", rep.band.0),
        rec("band_high", rep.band.1),
        rec("fit_failures", rep.failures as f64),
        rec("rel_mean_error_median", finite_median(&errs)),
        rec("trace_median", finite_median(&traces)),
    ]
}

fn run_phase(
    cfg: &Exp6Config,
    dim: usize,
    ns: &[usize],
    rng: &Rng,
    timings: bool,
    records: &mut Vec<ExperimentRecord>,
) -> Result<()> {
    let model = LogisticModel::standard(dim);
    let phase_rng = rng.split_labeled(&format!("d{dim}"));
    let approximators = [
        Approximator::Laplace,
        Approximator::Sivi(cfg.sivi.clone()),
        Approximator::ExactConjugate,
    ];
    let mut errors_by_approx: Vec<Vec<f64>> = vec![Vec::new(); approximators.len()];
    for &n in ns {
        let mut reports = Vec::new();
        for (a_idx, a) in approximators.iter().enumerate() {
            let timer = TaskTimer::start(timings);
            let rep = coverage_study(&model, n, cfg.replications, a, &phase_rng)?;
            let p = params([("approximator", a.name().into()), ("d", dim.into()), ("n", n.into())]);
            let recs = report_records(&p, &rep, &model.theta_star, timer.seconds());
            errors_by_approx[a_idx].push(
                recs.iter()
                    .find(|r| r.metric == "rel_mean_error_median")
                    .map_or(f64::NAN, |r| r.value),
            );
            records.extend(recs);
            reports.push(rep);
        }
        let ratios: Vec<f64> = reports[1]
            .outcomes
            .iter()
            .zip(&reports[0].outcomes)
            .filter_map(|(s, l)| Some(s.approx.as_ref()?.trace() / l.approx.as_ref()?.trace()))
            .collect();
        records.push(ExperimentRecord::new(
            ID,
            None,
            params([("d", dim.into()), ("n", n.into())]),
            "variance_ratio_median",
            finite_median(&ratios),
        ));
    }
    let n_values: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    for (a, errs) in approximators.iter().zip(&errors_by_approx) {
        records.push(ExperimentRecord::new(
            ID,
            None,
            params([("approximator", a.name().into()), ("d", dim.into())]),
            "rel_error_spearman",
            spearman(&n_values, errs),
        ));
    }
    Ok(())
}

/// Credible-ellipsoid coverage, mean error and variance ratio of SIVI and
/// Laplace posteriors for Bayesian logistic regression, with the exact
/// conjugate posterior as a calibration check of the study itself.
pub fn run_exp6(cfg: &Exp6Config, rng: &Rng, timings: bool) -> Result<ExperimentOutput> {
    let mut records = Vec::new();
    run_phase(cfg, cfg.phase1_dim, &cfg.phase1_ns, rng, timings, &mut records)?;
    if cfg.phase2 {
        run_phase(cfg, cfg.phase2_dim, &cfg.phase2_ns, rng, timings, &mut records)?;
    }
    super::record::sort_records(&mut records);
    Ok(ExperimentOutput {
        records,
        aux: Vec::new(),
    })
}
