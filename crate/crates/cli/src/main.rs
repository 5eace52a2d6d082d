use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use log::{info, warn};
use sivi_core::harness::{
    csv_path, emit_svg_plots, exit_code, load_csv, run_experiment, run_selftest, threads_from_env, with_worker_pool,
    write_output, AuxTable, ExperimentId, LabConfig, RunManifest,
};

#[derive(Parser, Debug)]
#[command(name = "sivi-lab", version, about = "Semi-implicit variational inference laboratory")]
struct Cli {
    /// Divide iteration budgets and Monte Carlo sizes by ten.
    #[arg(long, global = true)]
    quick: bool,
    /// Number of seeds for every experiment.
    #[arg(long, global = true)]
    seeds: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "results")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one experiment (exp1..exp6) or `all`.
    Run {
        experiment: String,
        /// JSON config; command-line flags take precedence.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        master_seed: Option<u64>,
        /// Record wall-clock seconds per task (breaks byte-identical output).
        #[arg(long)]
        timings: bool,
        /// Skip SVG emission.
        #[arg(long)]
        no_plots: bool,
    },
    /// Re-render the SVG panels of a finished run.
    Plot {
        experiment: ExperimentId,
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Run the oracle and invariant checks.
    Selftest,
}

fn experiments(arg: &str) -> anyhow::Result<Vec<ExperimentId>> {
    if arg == "all" {
        return Ok(ExperimentId::ALL.to_vec());
    }
    Ok(vec![arg
        .parse()
        .with_context(|| format!("unknown experiment '{arg}'"))?])
}

fn aux_tables(dir: &Path, id: ExperimentId) -> anyhow::Result<Vec<AuxTable>> {
    let prefix = format!("{id}_");
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let file = entry?.file_name().to_string_lossy().into_owned();
        if let Some(name) = file.strip_prefix(&prefix).and_then(|f| f.strip_suffix(".csv")) {
            out.push(AuxTable::read(name, &dir.join(&file))?);
        }
    }
    out.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(out)
}

fn run(
    cli: &Cli,
    which: &str,
    config: Option<&Path>,
    master_seed: Option<u64>,
    timings: bool,
    plots: bool,
) -> anyhow::Result<i32> {
    let mut cfg = match config {
        Some(p) => LabConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
        None => LabConfig::default(),
    };
    cfg.quick |= cli.quick;
    cfg.timings |= timings;
    if cli.seeds.is_some() {
        cfg.seeds = cli.seeds;
    }
    if let Some(s) = master_seed {
        cfg.master_seed = s;
    }
    cfg.validate()?;
    let ids = experiments(which)?;
    let threads = threads_from_env();
    let pool_size = threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    std::fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;

    let mut manifest = RunManifest::start(serde_json::to_value(cfg.effective())?, ids.clone(), pool_size);
    for &id in &ids {
        info!("running {id}");
        let out = with_worker_pool(threads, || run_experiment(id, &cfg))??;
        write_output(&cli.out, id, &out)?;
        manifest.flagged_records += out.flagged();
        if plots {
            let (_, warnings) = emit_svg_plots(&out.records, &out.aux, id, &cli.out)?;
            for w in &warnings {
                warn!("{w}");
            }
            manifest.warnings.extend(warnings);
        }
        info!("{id}: {} records, {} flagged", out.records.len(), out.flagged());
    }
    manifest.finish();
    manifest.write(&cli.out.join("manifest.json"))?;
    Ok(exit_code(manifest.flagged_records))
}

fn plot(id: ExperimentId, dir: &Path) -> anyhow::Result<i32> {
    let path = csv_path(dir, id);
    let records = load_csv(&path).with_context(|| format!("loading {}", path.display()))?;
    if records.is_empty() {
        bail!("{} has no records", path.display());
    }
    let aux = aux_tables(dir, id)?;
    let (written, warnings) = emit_svg_plots(&records, &aux, id, dir)?;
    for w in &warnings {
        warn!("{w}");
    }
    for p in &written {
        println!("{}", p.display());
    }
    Ok(0)
}

fn selftest() -> anyhow::Result<i32> {
    let checks = run_selftest()?;
    let mut failed = 0;
    for c in &checks {
        println!("{} {} ({})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        failed += usize::from(!c.passed);
    }
    Ok(if failed == 0 { 0 } else { 1 })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run {
            experiment,
            config,
            master_seed,
            timings,
            no_plots,
        } => run(&cli, experiment, config.as_deref(), *master_seed, *timings, !no_plots),
        Command::Plot { experiment, input } => plot(*experiment, input),
        Command::Selftest => selftest(),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
