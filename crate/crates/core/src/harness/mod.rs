//! Experiment runners, configuration, CSV/SVG emission and the plumbing used by
//! the `sivi-lab` command-line tool.
//!
//! Every runner splits its work into independent (parameter tuple, seed) tasks,
//! each owning an [`Rng`] substream derived from the master seed, and sorts the
//! merged records before emission. Output is therefore identical for any
//! worker-pool size.

mod common;
mod config;
mod exp1;
mod exp2;
mod exp3;
mod exp4;
mod exp5;
mod exp6;
mod plot;
mod record;
mod selftest;

use std::path::{Path, PathBuf};

pub use common::spearman;
pub use config::{
    Exp1Config, Exp2Config, Exp3Config, Exp4Config, Exp5Config, Exp6Config, ExperimentId, LabConfig,
    DEFAULT_MASTER_SEED,
};
pub use exp1::run_exp1;
pub use exp2::run_exp2;
pub use exp3::run_exp3;
pub use exp4::run_exp4;
pub use exp5::run_exp5;
pub use exp6::run_exp6;
pub use plot::{check_svg_well_formed, emit_svg_plots};
pub use record::{
    emit_csv, load_csv, param_json, params, read_csv, sort_records, write_csv, ExperimentRecord, ParamValue, Params,
    RunManifest, CSV_HEADER,
};
pub use selftest::{run_selftest, SelftestCheck};

use crate::error::{Result, SiviError};
use crate::ndcore::Rng;

/// Metrics whose non-zero value marks a flagged failure.
pub const FLAG_METRICS: [&str; 4] = ["diverged", "kl_underflow", "fit_failures", "task_failed"];

/// Environment variable bounding the worker pool.
pub const THREADS_ENV: &str = "SIVI_LAB_THREADS";

/// Side table written next to the main CSV (density grids, objective curves).
#[derive(Debug, Clone, PartialEq)]
pub struct AuxTable {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl AuxTable {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn file_name(&self, id: ExperimentId) -> String {
        format!("{id}_{}.csv", self.name)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(path)?;
        w.write_record(&self.columns)?;
        for r in &self.rows {
            w.write_record(r.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(name: &str, path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let columns = r.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| SiviError::InvalidConfig(format!("bad number '{s}' in {}", path.display())))
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        Ok(Self {
            name: name.to_string(),
            columns,
            rows,
        })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentOutput {
    pub records: Vec<ExperimentRecord>,
    pub aux: Vec<AuxTable>,
}

impl ExperimentOutput {
    pub fn flagged(&self) -> usize {
        self.records
            .iter()
            .filter(|r| FLAG_METRICS.contains(&r.metric.as_str()) && r.value != 0.0)
            .count()
    }
}

/// Metric names each experiment may emit.
pub fn metric_registry(id: ExperimentId) -> &'static [&'static str] {
    match id {
        ExperimentId::Exp1 => exp1::METRICS,
        ExperimentId::Exp2 => exp2::METRICS,
        ExperimentId::Exp3 => exp3::METRICS,
        ExperimentId::Exp4 => exp4::METRICS,
        ExperimentId::Exp5 => exp5::METRICS,
        ExperimentId::Exp6 => exp6::METRICS,
    }
}

/// Root stream of one experiment.
pub fn experiment_rng(cfg: &LabConfig, id: ExperimentId) -> Rng {
    Rng::new(cfg.master_seed).split_labeled(id.as_str())
}

/// Runs one experiment with quick scaling and overrides applied.
pub fn run_experiment(id: ExperimentId, cfg: &LabConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let eff = cfg.effective();
    let rng = experiment_rng(&eff, id);
    let t = eff.timings;
    let out = match id {
        ExperimentId::Exp1 => run_exp1(&eff.exp1, &rng, t)?,
        ExperimentId::Exp2 => run_exp2(&eff.exp2, &rng, t)?,
        ExperimentId::Exp3 => run_exp3(&eff.exp3, &rng, t)?,
        ExperimentId::Exp4 => run_exp4(&eff.exp4, &rng, t)?,
        ExperimentId::Exp5 => run_exp5(&eff.exp5, &rng, t)?,
        ExperimentId::Exp6 => run_exp6(&eff.exp6, &rng, t)?,
    };
    let registry = metric_registry(id);
    if let Some(r) = out.records.iter().find(|r| !registry.contains(&r.metric.as_str())) {
        return Err(SiviError::InvalidConfig(format!(
            "metric '{}' is not registered for {id}",
            r.metric
        )));
    }
    Ok(out)
}

/// Worker count from [`THREADS_ENV`], if set to a positive integer.
pub fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .filter(|&n: &usize| n > 0)
}

/// Runs `f` on a dedicated pool of `threads` workers (rayon's default when `None`).
pub fn with_worker_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        b = b.num_threads(n);
    }
    let pool = b
        .build()
        .map_err(|e| SiviError::InvalidConfig(format!("cannot build worker pool: {e}")))?;
    Ok(pool.install(f))
}

pub fn csv_path(dir: &Path, id: ExperimentId) -> PathBuf {
    dir.join(format!("{id}.csv"))
}

/// Writes the main CSV and every side table of one experiment into `dir`.
pub fn write_output(dir: &Path, id: ExperimentId, out: &ExperimentOutput) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    emit_csv(&out.records, &csv_path(dir, id))?;
    for t in &out.aux {
        t.write(&dir.join(t.file_name(id)))?;
    }
    Ok(())
}

/// Exit status for a finished run: 0 when clean, 2 when any record is flagged.
pub fn exit_code(flagged: usize) -> i32 {
    if flagged > 0 {
        2
    } else {
        0
    }
}
