//! Per-stratum medians over completed runs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use super::config::GridPoint;
use super::manifest::{RunManifest, RunMode};
use super::{parse_results, ResultRow, RESULTS_FILE, SCHEMA_LINE};
use crate::dataset::{write_atomic, Stratum};
use crate::error::{Error, IoContext, Result};
use crate::stats::{iqr, median};

pub const SUMMARY_FILE: &str = "summary.csv";
pub const SEED_SUMMARY_FILE: &str = "summary_by_seed.csv";
pub const SUMMARY_HEADER: &str =
    "sample,mode,gamma,delta,eta,seed,stratum,users,seeds,median_ads,iqr_ads,median_dtc,iqr_dtc";

/// Results of one completed run, tagged with where it sits in the sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResults {
    pub sample: String,
    pub mode: RunMode,
    pub point: Option<GridPoint>,
    pub seed: u64,
    pub rows: Vec<ResultRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub sample: String,
    pub mode: RunMode,
    pub point: Option<GridPoint>,
    /// `None` when users of several seeds are pooled.
    pub seed: Option<u64>,
    pub stratum: Stratum,
    pub users: usize,
    pub seeds: usize,
    pub median_ads: Option<f64>,
    pub iqr_ads: Option<f64>,
    pub median_dtc: Option<f64>,
    pub iqr_dtc: Option<f64>,
}

type CellKey = (String, RunMode, [u64; 3], Option<u64>);
type Cell<'a> = (Option<GridPoint>, BTreeSet<u64>, Vec<&'a ResultRow>);

fn point_key(p: Option<GridPoint>) -> [u64; 3] {
    // order-preserving bit pattern for non-negative floats
    p.map_or([0; 3], |p| [p.gamma.to_bits(), p.delta.to_bits(), p.eta.to_bits()])
}

/// One row per (sample, mode, grid point, stratum), or additionally per
/// seed when `per_seed` is set. Rows come out in a fixed order.
pub fn summarize_runs(runs: &[RunResults], per_seed: bool) -> Vec<SummaryRow> {
    let mut cells: BTreeMap<CellKey, Cell> = BTreeMap::new();
    for r in runs {
        let key = (r.sample.clone(), r.mode, point_key(r.point), per_seed.then_some(r.seed));
        let cell = cells
            .entry(key)
            .or_insert_with(|| (r.point, BTreeSet::new(), Vec::new()));
        cell.1.insert(r.seed);
        cell.2.extend(r.rows.iter());
    }
    let mut out = Vec::new();
    for ((sample, mode, _, seed), (point, seeds, rows)) in cells {
        for stratum in Stratum::ALL {
            let members: Vec<&&ResultRow> = rows.iter().filter(|r| r.stratum == stratum).collect();
            let ads: Vec<f64> = members.iter().map(|r| r.ads).collect();
            let dtc: Vec<f64> = members.iter().map(|r| r.dtc).collect();
            out.push(SummaryRow {
                sample: sample.clone(),
                mode,
                point,
                seed,
                stratum,
                users: members.len(),
                seeds: seeds.len(),
                median_ads: median(&ads),
                iqr_ads: iqr(&ads),
                median_dtc: median(&dtc),
                iqr_dtc: iqr(&dtc),
            });
        }
    }
    out
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut s = format!("{SCHEMA_LINE}\n{SUMMARY_HEADER}\n");
    for r in rows {
        let (g, d, e) = r
            .point
            .map_or((None, None, None), |p| (Some(p.gamma), Some(p.delta), Some(p.eta)));
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.sample,
            r.mode,
            opt(g),
            opt(d),
            opt(e),
            r.seed.map(|x| x.to_string()).unwrap_or_default(),
            r.stratum,
            r.users,
            r.seeds,
            opt(r.median_ads),
            opt(r.iqr_ads),
            opt(r.median_dtc),
            opt(r.iqr_dtc),
        );
    }
    s
}

/// Reads every completed run listed in the manifest under `dir`.
pub fn load_completed(dir: &Path) -> Result<Vec<RunResults>> {
    let manifest = RunManifest::load(dir)?;
    let mut out = Vec::new();
    for (id, run) in manifest.completed_runs() {
        let path = dir.join("runs").join(id).join(RESULTS_FILE);
        let text = std::fs::read_to_string(&path).context(|| format!("reading {}", path.display()))?;
        out.push(RunResults {
            sample: run.sample.clone(),
            mode: run.mode,
            point: run.point,
            seed: run.seed,
            rows: parse_results(&path, &text)?,
        });
    }
    Ok(out)
}

/// Writes the pooled and per-seed summaries of a result directory and
/// returns the pooled rows.
pub fn summarize(dir: &Path) -> Result<Vec<SummaryRow>> {
    let runs = load_completed(dir)?;
    if runs.is_empty() {
        return Err(Error::NoCompletedRuns(dir.to_path_buf()));
    }
    let pooled = summarize_runs(&runs, false);
    write_atomic(&dir.join(SUMMARY_FILE), summary_csv(&pooled).as_bytes())?;
    let by_seed = summarize_runs(&runs, true);
    write_atomic(&dir.join(SEED_SUMMARY_FILE), summary_csv(&by_seed).as_bytes())?;
    Ok(pooled)
}
