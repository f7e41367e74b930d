use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use driftsim::harness::{
    self, config, evaluate, load_data_dir, results_csv, DataSource, ExperimentConfig, PreparedData, ResultRow,
};
use driftsim::organic::organic_simulation;
use driftsim::recommender::{fit, load_model, save_model, FitConfig};
use driftsim::simulator::{load_runs, run_simulation, SimOptions, SimulationOutput, UserRun};
use driftsim::synthgen::generate;
use driftsim::{dataset::write_atomic, Error, Result, WalkConfig};

#[derive(Parser)]
#[command(name = "driftsim", version, about = "Simulate and measure algorithmic drift")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replaces the seed list with a single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (or file for `fit` and `evaluate`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// 300 users, 500 items, B = 10, T = 30.
    #[arg(long, global = true)]
    desk_scale: bool,
    /// Worker threads; falls back to DRIFTSIM_THREADS.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset for the first proportion and seed.
    Generate,
    /// Fit the configured recommender on a generated dataset.
    Fit {
        #[arg(long)]
        data: PathBuf,
    },
    /// Simulate the first grid point; without `--model` the organic run.
    Simulate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        trace: bool,
    },
    /// Compute per-user ADS and DTC from a simulation directory.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        runs: PathBuf,
    },
    /// Run the full sweep.
    Run,
    /// Rebuild the summaries of a result directory.
    Summarize { dir: PathBuf },
}

enum Outcome {
    Done,
    Partial(usize),
}

fn resolve_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => config::load(p)?,
        None => ExperimentConfig::default(),
    };
    if c.desk_scale {
        cfg.apply_desk_scale();
    }
    if let Some(s) = c.seed {
        cfg.seeds = vec![s];
    }
    if let Some(o) = &c.out {
        cfg.out = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_path(c: &Common, what: &str) -> Result<PathBuf> {
    c.out
        .clone()
        .ok_or_else(|| Error::config(format!("{what} needs --out")))
}

fn load_data(cfg: &ExperimentConfig, dir: &Path) -> Result<PreparedData<f64>> {
    let thresholds = match &cfg.data {
        DataSource::Synthetic(s) => s.thresholds,
        DataSource::Files { thresholds, .. } => *thresholds,
    };
    let organic = driftsim::OrganicConfig {
        seed: cfg.seeds[0],
        ..cfg.organic
    };
    load_data_dir(dir, thresholds, &cfg.target, organic)
}

fn execute(cli: Cli) -> Result<Outcome> {
    harness::configure_threads(cli.common.threads)?;
    let cfg = resolve_config(&cli.common)?;
    let seed = cfg.seeds[0];
    match cli.command {
        Command::Generate => {
            let out = out_path(&cli.common, "generate")?;
            let synth = cfg
                .synth_for(cfg.proportions[0], seed)
                .ok_or_else(|| Error::config("generate needs a synthetic data source"))?;
            let data = generate::<f64>(&synth)?;
            std::fs::create_dir_all(&out).map_err(|e| io_error(&out, e))?;
            data.save(&out)?;
            info!(
                "wrote {} users and {} items to {}",
                data.dataset.num_users(),
                data.dataset.num_items(),
                out.display()
            );
        }
        Command::Fit { data } => {
            let out = out_path(&cli.common, "fit")?;
            let d = load_data(&cfg, &data)?;
            let fit_cfg = FitConfig {
                seed,
                ..cfg.recommender.clone()
            };
            let (model, report) = fit::<f64>(&d.dataset, &fit_cfg)?;
            save_model(model.as_ref(), &out)?;
            println!(
                "validation_recall={} test_recall={}",
                report.validation_recall, report.test_recall
            );
        }
        Command::Simulate { data, model, trace } => {
            let out = out_path(&cli.common, "simulate")?;
            let d = load_data(&cfg, &data)?;
            let opts = SimOptions { record_trace: trace };
            let sim = match model {
                Some(path) => {
                    let m = load_model::<f64>(&path)?;
                    let params = cfg.choice_params(cfg.grid()[0]);
                    run_simulation(
                        &d.dataset,
                        &d.labeling,
                        Some(m.as_ref()),
                        &d.organic,
                        &params,
                        seed,
                        &opts,
                    )?
                }
                None => organic_simulation(&d.dataset, &d.labeling, &d.organic, cfg.rounds, cfg.steps, seed, &opts)?,
            };
            std::fs::create_dir_all(&out).map_err(|e| io_error(&out, e))?;
            sim.save(&out, &d.labeling, trace)?;
            let t = sim.branch_totals();
            info!("branch counts {t:?}");
        }
        Command::Evaluate { data, runs } => {
            let out = out_path(&cli.common, "evaluate")?;
            let d = load_data(&cfg, &data)?;
            let loaded = load_runs(&runs, d.dataset.num_users())?;
            let sim = SimulationOutput {
                params: cfg.choice_params(cfg.grid()[0]),
                seed,
                users: loaded
                    .into_iter()
                    .enumerate()
                    .map(|(user, (counts, picks))| UserRun {
                        user,
                        counts,
                        picks,
                        branch_counts: [0; 4],
                        empty_lists: 0,
                        short_lists: 0,
                        trace: Vec::new(),
                    })
                    .collect(),
            };
            let walks = WalkConfig { seed, ..cfg.walks };
            let metrics = evaluate(&sim, &d, &walks)?;
            let rows: Vec<ResultRow> = metrics.iter().map(ResultRow::from).collect();
            write_atomic(&out, results_csv(&rows).as_bytes())?;
        }
        Command::Run => {
            let report = harness::run_experiment(&cfg)?;
            println!(
                "{}: {} completed, {} reused, {} failed",
                report.out.display(),
                report.completed,
                report.reused,
                report.failed
            );
            if report.failed > 0 {
                return Ok(Outcome::Partial(report.failed));
            }
        }
        Command::Summarize { dir } => {
            let rows = harness::summarize(&dir)?;
            println!("{} summary rows written to {}", rows.len(), dir.display());
        }
    }
    Ok(Outcome::Done)
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        context: format!("creating {}", path.display()),
        source,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Partial(n)) => {
            eprintln!("error: {n} run(s) failed; see the manifest");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
