//! Experiment orchestration: sweeps over samples, seeds and `(γ, δ, η)`,
//! with organic baselines, per-user metrics, summaries and a manifest.
//!
//! Layout of a result directory:
//!
//! ```text
//! manifest.toml
//! summary.csv, summary_by_seed.csv
//! data/<dataset>/      generated data and the fitted model
//! runs/<run>/          results.csv, graphs.csv, picks.csv, trace.csv
//! ```

pub mod config;
pub mod manifest;
pub mod summary;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;

pub use config::{DataSource, ExperimentConfig, GridPoint, Precision};
pub use manifest::{RunEntry, RunManifest, RunMode, Status};
pub use summary::{summarize, SummaryRow};

use crate::dataset::{
    assign_population, load_labeled, write_atomic, CategoryId, InteractionDataset, Labeling, PopulationAssignment,
    Stratum, Thresholds, UserId,
};
use crate::error::{Error, IoContext, Result};
use crate::graph::{build_graph, UserGraph};
use crate::linalg::Matrix;
use crate::metrics::{ads, dtc, AdsResult, DtcResult, Estimator, WalkConfig};
use crate::organic::{organic_simulation, OrganicConfig, OrganicModel};
use crate::recommender::{fit, save_model, FitConfig, Recommender};
use crate::scalar::Real;
use crate::simulator::{
    run_simulation, ChoiceParams, SimOptions, SimulationOutput, GRAPHS_FILE, PICKS_FILE, TRACE_FILE,
};
use crate::synthgen::{files, generate};
use manifest::{files_intact, hash_files, sha256_hex, DatasetEntry};

pub const SCHEMA_LINE: &str = "# schema=1";
pub const RESULTS_HEADER: &str = "user_id,stratum,ads,ads_stderr,dtc,estimator,partial";
pub const RESULTS_FILE: &str = "results.csv";
pub const MODEL_FILE: &str = "model.txt";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const THREADS_ENV: &str = "DRIFTSIM_THREADS";

/// Sizes the global worker pool from `threads`, falling back to
/// `DRIFTSIM_THREADS`, then to one worker per core.
pub fn configure_threads(threads: Option<usize>) -> Result<()> {
    let n = match threads {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => Some(
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::config(format!("{THREADS_ENV}={v:?} is not a thread count")))?,
            ),
            Err(_) => None,
        },
    };
    if n == Some(0) {
        return Err(Error::config("thread count must be at least 1"));
    }
    if let Some(n) = n {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::config(format!("worker pool: {e}")))?;
    }
    Ok(())
}

/// Everything a simulation needs about one dataset.
#[derive(Debug, Clone)]
pub struct PreparedData<F> {
    pub dataset: InteractionDataset,
    pub labeling: Labeling,
    pub population: PopulationAssignment,
    pub organic: OrganicModel<F>,
    pub target: CategoryId,
}

/// Loads interactions, labels and features from explicit paths.
pub fn load_files<F: Real>(
    interactions: &Path,
    labels: &Path,
    user_features: &Path,
    item_features: &Path,
    thresholds: Thresholds,
    target: &str,
    organic: OrganicConfig,
) -> Result<PreparedData<F>> {
    let (dataset, labeling) = load_labeled(interactions, labels)?;
    let target = labeling.category_id(target)?;
    let population = assign_population(&dataset, &labeling, target, thresholds)?;
    let rho = Matrix::load_text(user_features)?;
    let alpha = Matrix::load_text(item_features)?;
    if rho.rows() != dataset.num_users() || alpha.rows() != dataset.num_items() {
        return Err(Error::config(format!(
            "feature rows ({} users, {} items) do not match the dataset ({} users, {} items)",
            rho.rows(),
            alpha.rows(),
            dataset.num_users(),
            dataset.num_items()
        )));
    }
    Ok(PreparedData {
        organic: OrganicModel::new(rho, alpha, organic)?,
        dataset,
        labeling,
        population,
        target,
    })
}

/// Loads a directory written by the synthetic generator.
pub fn load_data_dir<F: Real>(
    dir: &Path,
    thresholds: Thresholds,
    target: &str,
    organic: OrganicConfig,
) -> Result<PreparedData<F>> {
    load_files(
        &dir.join(files::INTERACTIONS),
        &dir.join(files::LABELS),
        &dir.join(files::USER_FEATURES),
        &dir.join(files::ITEM_FEATURES),
        thresholds,
        target,
        organic,
    )
}

/// Generates or loads the data for one (sample, seed) pair. The synthetic
/// files are written to `save_to` when given.
pub fn prepare_data<F: Real>(
    cfg: &ExperimentConfig,
    sample: Option<[f64; 3]>,
    seed: u64,
    save_to: Option<&Path>,
) -> Result<PreparedData<F>> {
    let organic = OrganicConfig { seed, ..cfg.organic };
    match (&cfg.data, sample) {
        (DataSource::Synthetic(_), Some(p)) => {
            let synth = cfg.synth_for(p, seed).expect("synthetic source");
            let out = generate::<F>(&synth)?;
            if let Some(dir) = save_to {
                out.save(dir)?;
            }
            let target = out.labeling.category_id(&cfg.target)?;
            Ok(PreparedData {
                organic: OrganicModel::new(out.user_features, out.item_features, organic)?,
                dataset: out.dataset,
                labeling: out.labeling,
                population: out.population,
                target,
            })
        }
        (
            DataSource::Files {
                interactions,
                labels,
                user_features,
                item_features,
                thresholds,
            },
            _,
        ) => load_files(
            interactions,
            labels,
            user_features,
            item_features,
            *thresholds,
            &cfg.target,
            organic,
        ),
        (DataSource::Synthetic(_), None) => Err(Error::config("synthetic data needs stratum proportions")),
    }
}

/// Per-user metrics of one simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct UserMetrics {
    pub user: UserId,
    pub stratum: Stratum,
    pub ads: AdsResult,
    pub dtc: DtcResult,
}

/// ADS and DTC for every simulated user. The Monte-Carlo estimator draws
/// from the per-user substream of `walks.seed`.
pub fn evaluate<F: Real>(
    out: &SimulationOutput,
    data: &PreparedData<F>,
    walks: &WalkConfig,
) -> Result<Vec<UserMetrics>> {
    out.users
        .par_iter()
        .map(|run| {
            let g: UserGraph<f64> = build_graph(&run.counts, &run.picks, &data.labeling);
            Ok(UserMetrics {
                user: run.user,
                stratum: data.population.stratum(run.user),
                ads: ads(&g, &data.labeling, data.target, walks, run.user as u64)?,
                dtc: dtc(data.dataset.history(run.user), &run.picks, &data.labeling, data.target)?,
            })
        })
        .collect()
}

/// One line of a results CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub user: UserId,
    pub stratum: Stratum,
    pub ads: f64,
    pub ads_stderr: f64,
    pub dtc: f64,
    pub estimator: Estimator,
    pub partial: bool,
}

impl From<&UserMetrics> for ResultRow {
    fn from(m: &UserMetrics) -> Self {
        Self {
            user: m.user,
            stratum: m.stratum,
            ads: m.ads.value,
            ads_stderr: m.ads.stderr,
            dtc: m.dtc.value,
            estimator: m.ads.estimator,
            partial: m.ads.partial,
        }
    }
}

pub fn results_csv(rows: &[ResultRow]) -> String {
    let mut s = format!("{SCHEMA_LINE}\n{RESULTS_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.user, r.stratum, r.ads, r.ads_stderr, r.dtc, r.estimator, r.partial
        );
    }
    s
}

pub fn parse_results(path: &Path, text: &str) -> Result<Vec<ResultRow>> {
    let bad = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate().map(|(n, l)| (n + 1, l));
    match lines.next() {
        Some((_, SCHEMA_LINE)) => {}
        other => {
            return Err(bad(
                1,
                format!("expected {SCHEMA_LINE:?}, found {:?}", other.map(|o| o.1)),
            ))
        }
    }
    match lines.next() {
        Some((_, RESULTS_HEADER)) => {}
        other => {
            return Err(bad(
                2,
                format!("expected header {RESULTS_HEADER:?}, found {:?}", other.map(|o| o.1)),
            ))
        }
    }
    lines
        .map(|(n, line)| {
            let f: Vec<&str> = line.split(',').collect();
            let err = |what: &str| bad(n, format!("{what} in {line:?}"));
            if f.len() != 7 {
                return Err(err("expected 7 fields"));
            }
            Ok(ResultRow {
                user: f[0].parse().map_err(|_| err("bad user_id"))?,
                stratum: f[1].parse().map_err(|_| err("bad stratum"))?,
                ads: f[2].parse().map_err(|_| err("bad ads"))?,
                ads_stderr: f[3].parse().map_err(|_| err("bad ads_stderr"))?,
                dtc: f[4].parse().map_err(|_| err("bad dtc"))?,
                estimator: f[5].parse().map_err(|_| err("bad estimator"))?,
                partial: f[6].parse().map_err(|_| err("bad partial"))?,
            })
        })
        .collect()
}

/// `20-60-20` style label of stratum shares (percent, two decimals at most).
pub fn sample_label(sample: Option<[f64; 3]>) -> String {
    match sample {
        Some(p) => p
            .iter()
            .map(|x| ((x * 1e4).round() / 1e2).to_string())
            .collect::<Vec<_>>()
            .join("-"),
        None => "file".to_string(),
    }
}

pub fn dataset_id(sample: Option<[f64; 3]>, seed: u64) -> String {
    format!("{}_s{seed}", sample_label(sample))
}

pub fn run_id(dataset: &str, mode: RunMode, point: Option<GridPoint>) -> String {
    match (mode, point) {
        (RunMode::Recsys, Some(p)) => format!("{dataset}_g{}_d{}_e{}", p.gamma, p.delta, p.eta),
        _ => format!("{dataset}_organic"),
    }
}

fn key_text(snapshot: &BTreeMap<String, toml::Value>, prefixes: &[&str], extra: &str) -> String {
    let mut s = String::new();
    for (k, v) in snapshot {
        if prefixes.iter().any(|p| k.starts_with(p)) {
            let _ = writeln!(s, "{k}={v}");
        }
    }
    s.push_str(extra);
    s
}

/// Input hashes. The organic key ignores the recommender and the grid, so
/// one organic run serves every grid point of a dataset.
struct Keys {
    dataset: String,
    organic: String,
    recsys_base: String,
}

fn run_keys(cfg: &ExperimentConfig, sample: Option<[f64; 3]>, seed: u64) -> Keys {
    let snap = cfg.snapshot();
    let data = key_text(
        &snap,
        &["synth.", "data.", "population."],
        &format!(
            "version={VERSION}\nsample={sample:?}\nseed={seed}\nmetrics.target={}\n",
            cfg.target
        ),
    );
    let shared = key_text(
        &snap,
        &["organic.", "metrics.", "output.", "sim.B", "sim.T", "sim.precision"],
        "",
    );
    let rec = key_text(&snap, &["recommender."], "");
    Keys {
        dataset: sha256_hex(data.as_bytes()),
        organic: sha256_hex(format!("{data}{shared}mode=organic\n").as_bytes()),
        recsys_base: format!("{data}{shared}{rec}mode=recsys\n"),
    }
}

fn recsys_key(base: &str, p: GridPoint) -> String {
    sha256_hex(format!("{base}gamma={}\ndelta={}\neta={}\n", p.gamma, p.delta, p.eta).as_bytes())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExperimentReport {
    pub out: PathBuf,
    pub completed: usize,
    pub reused: usize,
    pub failed: usize,
}

struct Timer(Instant);

impl Timer {
    fn start() -> Self {
        Timer(Instant::now())
    }

    fn lap(&mut self, timings: &mut BTreeMap<String, f64>, stage: &str) {
        timings.insert(stage.to_string(), self.0.elapsed().as_secs_f64());
        self.0 = Instant::now();
    }
}

fn rel(parts: &[&str]) -> String {
    parts.join("/")
}

/// Simulates, evaluates and writes one run; returns its files and timings.
#[allow(clippy::too_many_arguments)]
fn execute_run<F: Real>(
    cfg: &ExperimentConfig,
    data: &PreparedData<F>,
    model: Option<&dyn Recommender<F>>,
    params: &ChoiceParams,
    seed: u64,
    out_root: &Path,
    id: &str,
    timings: &mut BTreeMap<String, f64>,
) -> Result<BTreeMap<String, String>> {
    let mut t = Timer::start();
    let opts = SimOptions {
        record_trace: cfg.write_trace,
    };
    let sim = match model {
        Some(m) => run_simulation(
            &data.dataset,
            &data.labeling,
            Some(m),
            &data.organic,
            params,
            seed,
            &opts,
        )?,
        None => organic_simulation(
            &data.dataset,
            &data.labeling,
            &data.organic,
            params.rounds,
            params.steps,
            seed,
            &opts,
        )?,
    };
    t.lap(timings, "simulate");
    let walks = WalkConfig { seed, ..cfg.walks };
    let metrics = evaluate(&sim, data, &walks)?;
    t.lap(timings, "metrics");
    let dir = out_root.join("runs").join(id);
    std::fs::create_dir_all(&dir).context(|| format!("creating {}", dir.display()))?;
    let rows: Vec<ResultRow> = metrics.iter().map(ResultRow::from).collect();
    write_atomic(&dir.join(RESULTS_FILE), results_csv(&rows).as_bytes())?;
    let mut written = vec![rel(&["runs", id, RESULTS_FILE])];
    if cfg.write_graphs || cfg.write_trace {
        sim.save(&dir, &data.labeling, cfg.write_trace)?;
        written.push(rel(&["runs", id, GRAPHS_FILE]));
        written.push(rel(&["runs", id, PICKS_FILE]));
        if cfg.write_trace {
            written.push(rel(&["runs", id, TRACE_FILE]));
        }
    }
    t.lap(timings, "write");
    hash_files(out_root, &written)
}

type Plan = (Option<[f64; 3]>, u64, String, Vec<PlannedRun>);

struct PlannedRun {
    id: String,
    entry: RunEntry,
    reuse: bool,
}

/// Runs every (sample, seed, grid point) of `cfg` into `cfg.out`, reusing
/// runs that a previous manifest records as completed with the same inputs
/// and intact files. Failed runs are recorded and skipped.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let out = cfg.out.clone();
    std::fs::create_dir_all(&out).context(|| format!("creating {}", out.display()))?;
    let previous = RunManifest::load(&out).ok();
    let mut manifest = RunManifest {
        version: VERSION.to_string(),
        config: cfg.snapshot(),
        ..Default::default()
    };

    // plan every run first so the manifest lists all of them up front
    let mut plans: Vec<Plan> = Vec::new();
    for sample in cfg.samples() {
        for &seed in &cfg.seeds {
            let keys = run_keys(cfg, sample, seed);
            let ds = dataset_id(sample, seed);
            let label = sample_label(sample);
            let mut runs = Vec::new();
            let mut add = |mode: RunMode, point: Option<GridPoint>, key: String| {
                let id = run_id(&ds, mode, point);
                let prior = previous.as_ref().and_then(|m| m.runs.get(&id));
                let reuse = prior
                    .is_some_and(|p| p.status == Status::Completed && p.key == key && files_intact(&out, &p.files));
                let entry = match prior {
                    Some(p) if reuse => p.clone(),
                    _ => RunEntry {
                        mode,
                        status: Status::Pending,
                        key,
                        dataset: ds.clone(),
                        sample: label.clone(),
                        seed,
                        point,
                        timings: BTreeMap::new(),
                        files: BTreeMap::new(),
                        error: None,
                    },
                };
                runs.push(PlannedRun { id, entry, reuse });
            };
            add(RunMode::Organic, None, keys.organic.clone());
            for p in cfg.grid() {
                add(RunMode::Recsys, Some(p), recsys_key(&keys.recsys_base, p));
            }
            let prior_ds = previous
                .as_ref()
                .and_then(|m| m.datasets.get(&ds))
                .filter(|d| d.key == keys.dataset);
            manifest.datasets.insert(
                ds.clone(),
                prior_ds.cloned().unwrap_or(DatasetEntry {
                    key: keys.dataset.clone(),
                    sample: label.clone(),
                    seed,
                    status: Status::Pending,
                    timings: BTreeMap::new(),
                    files: BTreeMap::new(),
                    error: None,
                }),
            );
            for r in &runs {
                manifest.runs.insert(r.id.clone(), r.entry.clone());
            }
            plans.push((sample, seed, ds, runs));
        }
    }
    manifest.save(&out)?;

    let mut report = ExperimentReport {
        out: out.clone(),
        completed: 0,
        reused: 0,
        failed: 0,
    };
    for (sample, seed, ds, runs) in plans {
        let todo: Vec<&PlannedRun> = runs.iter().filter(|r| !r.reuse).collect();
        report.reused += runs.len() - todo.len();
        if todo.is_empty() {
            info!("{ds}: all runs reused");
            continue;
        }
        let (ds_entry, results) = match cfg.precision {
            Precision::F32 => process_dataset::<f32>(cfg, sample, seed, &ds, &todo, manifest.datasets[&ds].clone()),
            Precision::F64 => process_dataset::<f64>(cfg, sample, seed, &ds, &todo, manifest.datasets[&ds].clone()),
        };
        manifest.datasets.insert(ds.clone(), ds_entry);
        for (id, entry) in results {
            match entry.status {
                Status::Completed => report.completed += 1,
                _ => {
                    report.failed += 1;
                    warn!("run {id} failed: {}", entry.error.as_deref().unwrap_or("unknown error"));
                }
            }
            manifest.runs.insert(id, entry);
        }
        manifest.save(&out)?;
    }
    if report.completed + report.reused > 0 {
        summarize(&out)?;
    }
    Ok(report)
}

fn process_dataset<F: Real>(
    cfg: &ExperimentConfig,
    sample: Option<[f64; 3]>,
    seed: u64,
    ds: &str,
    todo: &[&PlannedRun],
    mut ds_entry: DatasetEntry,
) -> (DatasetEntry, Vec<(String, RunEntry)>) {
    let fail_all = |msg: String| -> Vec<(String, RunEntry)> {
        todo.iter()
            .map(|r| {
                let mut e = r.entry.clone();
                e.status = Status::Failed;
                e.error = Some(msg.clone());
                (r.id.clone(), e)
            })
            .collect()
    };
    let mut timer = Timer::start();
    let mut timings = BTreeMap::new();
    type Prepared<F> = (PreparedData<F>, Box<dyn Recommender<F>>, BTreeMap<String, String>);
    let prepared = (|| -> Result<Prepared<F>> {
        let dir = cfg.out.join("data").join(ds);
        std::fs::create_dir_all(&dir).context(|| format!("creating {}", dir.display()))?;
        let save_to = matches!(cfg.data, DataSource::Synthetic(_)).then_some(dir.as_path());
        let data = prepare_data::<F>(cfg, sample, seed, save_to)?;
        timer.lap(&mut timings, "generate");
        let fit_cfg = FitConfig {
            seed,
            ..cfg.recommender.clone()
        };
        let (model, _) = fit::<F>(&data.dataset, &fit_cfg)?;
        save_model(model.as_ref(), &dir.join(MODEL_FILE))?;
        timer.lap(&mut timings, "fit");
        let mut written = vec![rel(&["data", ds, MODEL_FILE])];
        if save_to.is_some() {
            for f in [
                files::INTERACTIONS,
                files::LABELS,
                files::POPULATION,
                files::USER_FEATURES,
                files::ITEM_FEATURES,
            ] {
                written.push(rel(&["data", ds, f]));
            }
        }
        Ok((data, model, hash_files(&cfg.out, &written)?))
    })();
    let (data, model, ds_files) = match prepared {
        Ok(p) => p,
        Err(e) => {
            ds_entry.status = Status::Failed;
            ds_entry.error = Some(e.to_string());
            return (ds_entry, fail_all(e.to_string()));
        }
    };
    ds_entry.status = Status::Completed;
    ds_entry.error = None;
    ds_entry.timings = timings;
    ds_entry.files = ds_files;

    let results = todo
        .par_iter()
        .map(|r| {
            let mut e = r.entry.clone();
            let mut timings = BTreeMap::new();
            let params = match r.entry.point {
                Some(p) => cfg.choice_params(p),
                None => ChoiceParams {
                    gamma: 1.0,
                    eta: 0.0,
                    delta: 0.0,
                    rounds: cfg.rounds,
                    steps: cfg.steps,
                    k: 1,
                },
            };
            let m = (r.entry.mode == RunMode::Recsys).then_some(model.as_ref());
            match execute_run(cfg, &data, m, &params, seed, &cfg.out, &r.id, &mut timings) {
                Ok(files) => {
                    e.status = Status::Completed;
                    e.files = files;
                    e.error = None;
                    info!("run {} done", r.id);
                }
                Err(err) => {
                    e.status = Status::Failed;
                    e.error = Some(err.to_string());
                }
            }
            e.timings = timings;
            (r.id.clone(), e)
        })
        .collect();
    (ds_entry, results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn results_csv_round_trips() {
        let rows = vec![
            ResultRow {
                user: 0,
                stratum: Stratum::SemiRadicalized,
                ads: -0.125,
                ads_stderr: 0.0,
                dtc: 0.1,
                estimator: Estimator::Exact,
                partial: true,
            },
            ResultRow {
                user: 7,
                stratum: Stratum::Radicalized,
                ads: 1.0,
                ads_stderr: 0.003,
                dtc: -0.75,
                estimator: Estimator::MonteCarlo,
                partial: false,
            },
        ];
        let text = results_csv(&rows);
        assert!(text.starts_with("# schema=1\nuser_id,stratum,ads,ads_stderr,dtc,estimator,partial\n"));
        assert_eq!(parse_results(Path::new("r"), &text).unwrap(), rows);
        assert!(parse_results(Path::new("r"), "user_id\n").is_err());
    }

    #[test]
    fn labels_and_ids() {
        assert_eq!(sample_label(Some([0.05, 0.9, 0.05])), "5-90-5");
        assert_eq!(sample_label(Some([1.0 / 3.0; 3])), "33.33-33.33-33.33");
        let ds = dataset_id(Some([0.2, 0.6, 0.2]), 4);
        assert_eq!(ds, "20-60-20_s4");
        let p = GridPoint {
            gamma: 0.1,
            delta: 1.0,
            eta: 0.05,
        };
        assert_eq!(run_id(&ds, RunMode::Recsys, Some(p)), "20-60-20_s4_g0.1_d1_e0.05");
        assert_eq!(run_id(&ds, RunMode::Organic, None), "20-60-20_s4_organic");
    }

    #[test]
    fn organic_key_ignores_recommender_and_grid() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig {
            gammas: vec![0.0, 0.05],
            k: 5,
            recommender: FitConfig {
                neighbors: 7,
                ..FitConfig::default()
            },
            ..a.clone()
        };
        let (ka, kb) = (
            run_keys(&a, Some([0.2, 0.6, 0.2]), 1),
            run_keys(&b, Some([0.2, 0.6, 0.2]), 1),
        );
        assert_eq!(ka.organic, kb.organic);
        assert_ne!(ka.recsys_base, kb.recsys_base);
        let kc = run_keys(&a, Some([0.2, 0.6, 0.2]), 2);
        assert_ne!(ka.organic, kc.organic);
    }
}
