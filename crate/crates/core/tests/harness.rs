use std::path::Path;

use driftsim::harness::manifest::{files_intact, RunManifest, RunMode, Status};
use driftsim::harness::{config, parse_results, SCHEMA_LINE};
use driftsim::synthgen::generate;
use driftsim::{run_experiment, ExperimentConfig};

const TINY: &str = r#"
[synth]
users = 60
items = 300

[experiment]
proportions = [[20, 60, 20], [5, 90, 5]]

[sim]
seed = [0, 1]
gamma = [0.1, 1.0]
delta = 0.5
eta = 0.0
B = 2
T = 5
"#;

fn tiny(out: &Path) -> ExperimentConfig {
    let mut cfg = config::parse_str(TINY).unwrap();
    cfg.out = out.to_path_buf();
    cfg
}

fn results(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir.join("runs"))
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(p.join("results.csv")).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

#[test]
fn manifest_lists_every_run_with_intact_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let report = run_experiment(&cfg).unwrap();
    // 2 samples x 2 seeds x (organic + 2 grid points)
    assert_eq!((report.completed, report.reused, report.failed), (12, 0, 0));
    let m = RunManifest::load(dir.path()).unwrap();
    assert_eq!(m.runs.len(), 12);
    assert_eq!(m.datasets.len(), 4);
    assert_eq!(m.runs.values().filter(|r| r.mode == RunMode::Organic).count(), 4);
    for (id, run) in &m.runs {
        assert_eq!(run.status, Status::Completed, "{id}");
        assert!(run.files.keys().any(|f| f.ends_with("results.csv")), "{id}");
        assert!(files_intact(dir.path(), &run.files), "{id}");
        assert!(run.timings.contains_key("simulate"));
        let path = dir.path().join("runs").join(id).join("results.csv");
        let rows = parse_results(&path, &std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(rows.len(), 60);
    }
    for ds in m.datasets.values() {
        assert_eq!(ds.status, Status::Completed);
        assert!(files_intact(dir.path(), &ds.files));
    }
    for f in ["summary.csv", "summary_by_seed.csv"] {
        let text = std::fs::read_to_string(dir.path().join(f)).unwrap();
        assert_eq!(text.lines().next(), Some(SCHEMA_LINE));
    }
}

#[test]
fn rerun_reuses_completed_runs_and_recomputes_damaged_ones() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    run_experiment(&cfg).unwrap();
    let before = results(dir.path());

    let again = run_experiment(&cfg).unwrap();
    assert_eq!((again.completed, again.reused), (0, 12));

    let victim = dir.path().join("runs").join(&before[0].0).join("results.csv");
    std::fs::write(&victim, "damaged").unwrap();
    let repaired = run_experiment(&cfg).unwrap();
    assert_eq!((repaired.completed, repaired.reused), (1, 11));
    assert_eq!(results(dir.path()), before);
}

#[test]
fn organic_runs_survive_recommender_and_grid_changes() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    run_experiment(&cfg).unwrap();

    cfg.gammas.push(0.5);
    let grown = run_experiment(&cfg).unwrap();
    // one new grid point per dataset; organic and old points reused
    assert_eq!((grown.completed, grown.reused), (4, 12));

    cfg.recommender.neighbors = 10;
    let refit = run_experiment(&cfg).unwrap();
    assert_eq!((refit.completed, refit.reused), (12, 4));
    let m = RunManifest::load(dir.path()).unwrap();
    assert!(m.completed_runs().count() == 16);
}

#[test]
fn config_file_paths_resolve_against_its_directory() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let synth = generate::<f64>(&tiny(dir.path()).synth_for([0.2, 0.6, 0.2], 3).unwrap()).unwrap();
    synth.save(&data).unwrap();
    let text = format!(
        "{TINY}\n[data]\ninteractions = \"data/interactions.tsv\"\nlabels = \"data/labels.tsv\"\n\
         user_features = \"data/user_features.txt\"\nitem_features = \"data/item_features.txt\"\n\
         [output]\ndir = \"out\"\n"
    );
    let path = dir.path().join("exp.toml");
    std::fs::write(&path, text).unwrap();
    let cfg = config::load(&path).unwrap();
    assert_eq!(cfg.out, dir.path().join("out"));
    let report = run_experiment(&cfg).unwrap();
    // file data has a single sample; two seeds, organic plus two grid points
    assert_eq!(report.completed, 6);
    assert!(dir.path().join("out/runs/file_s0_organic/results.csv").exists());
}

#[test]
fn unreadable_data_marks_runs_failed() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        "{TINY}\n[data]\ninteractions = \"missing.tsv\"\nlabels = \"missing.tsv\"\n\
         user_features = \"missing.txt\"\nitem_features = \"missing.txt\"\n"
    );
    let mut cfg = config::parse_str(&text).unwrap();
    cfg.out = dir.path().join("out");
    let report = run_experiment(&cfg).unwrap();
    assert_eq!((report.completed, report.failed), (0, 6));
    let m = RunManifest::load(&cfg.out).unwrap();
    // six runs plus the two datasets they depend on
    assert_eq!(m.failed(), 8);
    assert!(m
        .runs
        .values()
        .all(|r| r.error.as_deref().is_some_and(|e| e.contains("missing"))));
}

#[test]
fn unknown_keys_are_rejected() {
    let err = config::parse_str("[sim]\ngama = 0.1\n").unwrap_err();
    assert!(err.is_config());
    assert!(err.to_string().contains("sim.gama"));
}

#[test]
fn grid_sweep_counts_one_organic_run_per_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.proportions = vec![[0.05, 0.9, 0.05], [0.2, 0.6, 0.2], [1.0 / 3.0; 3]];
    cfg.seeds = vec![0];
    cfg.gammas = vec![0.0, 0.1, 0.5];
    cfg.deltas = vec![0.5, 0.75, 1.0];
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.completed, 30);
    let m = RunManifest::load(dir.path()).unwrap();
    let organic = m.runs.values().filter(|r| r.mode == RunMode::Organic).count();
    assert_eq!((organic, m.runs.len() - organic), (3, 27));
}
