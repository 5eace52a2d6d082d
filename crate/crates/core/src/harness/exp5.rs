use rayon::prelude::*;

use super::common::{positive_log_log_slope, TaskTimer};
use super::config::{Exp5Config, ExperimentId};
use super::record::{params, ExperimentRecord};
use super::{AuxTable, ExperimentOutput};
use crate::error::{Result, SiviError};
use crate::metrics::{empirical_objective_affine, gamma_distance, population_objective_affine, ObjectiveCurve};
use crate::ndcore::{mean_and_stderr, Rng};

pub(crate) const METRICS: &[&str] = &[
    "theta_hat",
    "gamma_distance",
    "theta_hat_mean_curve",
    "abs_theta_hat_mean",
    "gamma_distance_mean",
    "gamma_slope_k",
    "gamma_slope_n",
    "grid_step",
];

const ID: ExperimentId = ExperimentId::Exp5;

/// Observations and a full row of `k_max` latents per observation; smaller
/// `(K, n)` use prefixes, so the designs are nested.
struct SeedData {
    x: Vec<f64>,
    z: Vec<f64>,
    k_max: usize,
}

impl SeedData {
    fn latents(&self, k: usize, n: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(n * k);
        for i in 0..n {
            out.extend_from_slice(&self.z[i * self.k_max..i * self.k_max + k]);
        }
        out
    }
}

/// Landscape of the affine family's finite-`(K, n)` objective against its
/// closed-form limit: maximizers, Γ-distances and their rates.
pub fn run_exp5(cfg: &Exp5Config, rng: &Rng, timings: bool) -> Result<ExperimentOutput> {
    if cfg.grid_points < 2 {
        return Err(SiviError::InvalidConfig("exp5 grid needs at least two points".into()));
    }
    let grid = ObjectiveCurve::uniform_grid(-cfg.grid_half_width, cfg.grid_half_width, cfg.grid_points);
    let limit = ObjectiveCurve::tabulate(grid.clone(), |t| population_objective_affine(t, cfg.theta_star));
    let n_max = *cfg.ns.iter().max().expect("validated non-empty");
    let k_max = *cfg.ks.iter().max().expect("validated non-empty");

    let data: Vec<SeedData> = (0..cfg.seeds as u64)
        .into_par_iter()
        .map(|s| {
            let mut r = rng.split_labeled("data").split(s);
            let x = (0..n_max).map(|_| cfg.theta_star + r.standard_normal()).collect();
            let mut zr = rng.split_labeled("latents").split(s);
            let mut z = vec![0.0; n_max * k_max];
            zr.fill_standard_normal(&mut z);
            SeedData { x, z, k_max }
        })
        .collect();

    let mut tasks = Vec::new();
    for s in 0..cfg.seeds {
        for &k in &cfg.ks {
            for &n in &cfg.ns {
                tasks.push((s, k, n));
            }
        }
    }
    let curves: Vec<(usize, usize, usize, ObjectiveCurve, Option<f64>)> = tasks
        .par_iter()
        .map(|&(s, k, n)| {
            let timer = TaskTimer::start(timings);
            let d = &data[s];
            let z = d.latents(k, n);
            let c = ObjectiveCurve::tabulate(grid.clone(), |t| empirical_objective_affine(t, &d.x[..n], &z, k));
            (s, k, n, c, timer.seconds())
        })
        .collect();

    let mut records = Vec::new();
    let mut aux = AuxTable::new("curves", &["K", "n", "theta", "objective", "limit"]);
    let mut gamma_means = Vec::new();
    for &k in &cfg.ks {
        for &n in &cfg.ns {
            let p = params([("K", k.into()), ("n", n.into())]);
            let mut avg = vec![0.0; grid.len()];
            let mut gammas = Vec::new();
            let mut abs_hats = Vec::new();
            for (s, _, _, c, secs) in curves.iter().filter(|t| t.1 == k && t.2 == n) {
                let g = gamma_distance(c, &limit)?;
                let hat = c.argmax();
                records
                    .push(ExperimentRecord::new(ID, Some(*s as u64), p.clone(), "theta_hat", hat).with_seconds(*secs));
                records.push(
                    ExperimentRecord::new(ID, Some(*s as u64), p.clone(), "gamma_distance", g).with_seconds(*secs),
                );
                gammas.push(g);
                abs_hats.push(hat.abs());
                for (a, v) in avg.iter_mut().zip(&c.values) {
                    *a += v / cfg.seeds as f64;
                }
            }
            let mean_curve = ObjectiveCurve {
                grid: grid.clone(),
                values: avg,
            };
            records.push(ExperimentRecord::new(
                ID,
                None,
                p.clone(),
                "theta_hat_mean_curve",
                mean_curve.argmax(),
            ));
            let (m, se) = mean_and_stderr(&abs_hats);
            records.push(ExperimentRecord::new(ID, None, p.clone(), "abs_theta_hat_mean", m).with_stderr(se));
            let (gm, gse) = mean_and_stderr(&gammas);
            records.push(ExperimentRecord::new(ID, None, p.clone(), "gamma_distance_mean", gm).with_stderr(gse));
            gamma_means.push((k, n, gm));
            for ((t, v), l) in grid.iter().zip(&mean_curve.values).zip(&limit.values) {
                aux.rows.push(vec![k as f64, n as f64, *t, *v, *l]);
            }
        }
    }
    for &n in &cfg.ns {
        let (ks, gs): (Vec<f64>, Vec<f64>) = gamma_means
            .iter()
            .filter(|g| g.1 == n)
            .map(|g| (g.0 as f64, g.2))
            .unzip();
        records.push(ExperimentRecord::new(
            ID,
            None,
            params([("n", n.into())]),
            "gamma_slope_k",
            positive_log_log_slope(&ks, &gs),
        ));
    }
    for &k in &cfg.ks {
        let (ns, gs): (Vec<f64>, Vec<f64>) = gamma_means
            .iter()
            .filter(|g| g.0 == k)
            .map(|g| (g.1 as f64, g.2))
            .unzip();
        records.push(ExperimentRecord::new(
            ID,
            None,
            params([("K", k.into())]),
            "gamma_slope_n",
            positive_log_log_slope(&ns, &gs),
        ));
    }
    records.push(ExperimentRecord::new(
        ID,
        None,
        params([]),
        "grid_step",
        grid[1] - grid[0],
    ));
    super::record::sort_records(&mut records);
    Ok(ExperimentOutput {
        records,
        aux: vec![aux],
    })
}
