use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use driftsim::harness::{config, ExperimentConfig};
use driftsim::synthgen::generate;
use driftsim::{Error, Result};

/// Writes a synthetic dataset: interactions, labels, population and the
/// user and item feature matrices.
#[derive(Parser)]
#[command(name = "synthgen", version)]
struct Cli {
    /// Config file; the `synth.*`, `population.*` and first
    /// `experiment.proportions` entries are used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the first `sim.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

fn execute(cli: &Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => config::load(p)?,
        None => ExperimentConfig::default(),
    };
    let seed = cli.seed.unwrap_or(cfg.seeds[0]);
    let synth = cfg
        .synth_for(cfg.proportions[0], seed)
        .ok_or_else(|| Error::config("config names data files, not a synthetic source"))?;
    let out = generate::<f64>(&synth)?;
    std::fs::create_dir_all(&cli.out).map_err(|source| Error::Io {
        context: format!("creating {}", cli.out.display()),
        source,
    })?;
    out.save(&cli.out)?;
    let [non, semi, rad] = out.population.counts();
    println!(
        "{} users ({non} non, {semi} semi, {rad} radicalized), {} items, {} interactions",
        out.dataset.num_users(),
        out.dataset.num_items(),
        out.dataset.len()
    );
    Ok(())
}

fn main() -> ExitCode {
    match execute(&Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}
