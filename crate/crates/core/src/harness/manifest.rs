//! Run manifest: what was planned, what finished, how long each stage took
//! and the sha256 of every file written.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};
use toml::{Table, Value};

use super::config::GridPoint;
use crate::dataset::write_atomic;
use crate::error::{Error, IoContext, Result};

pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum RunMode {
    Organic,
    Recsys,
}

impl RunMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RunMode::Organic => "organic",
            RunMode::Recsys => "recsys",
        }
    }
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RunMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "organic" => Ok(RunMode::Organic),
            "recsys" => Ok(RunMode::Recsys),
            other => Err(Error::config(format!("unknown run mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pending,
    Completed,
    Failed,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Pending => "pending",
            Status::Completed => "completed",
            Status::Failed => "failed",
        }
    }
}

impl FromStr for Status {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pending" => Ok(Status::Pending),
            "completed" => Ok(Status::Completed),
            "failed" => Ok(Status::Failed),
            other => Err(Error::config(format!("unknown run status {other:?}"))),
        }
    }
}

/// One simulation run (recommender-driven or organic) and its metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct RunEntry {
    pub mode: RunMode,
    pub status: Status,
    /// Hash of every input the run depends on.
    pub key: String,
    pub dataset: String,
    /// Sample label, e.g. `20-60-20`.
    pub sample: String,
    pub seed: u64,
    /// `None` for organic runs.
    pub point: Option<GridPoint>,
    /// Stage name to seconds.
    pub timings: BTreeMap<String, f64>,
    /// Path relative to the result directory to sha256.
    pub files: BTreeMap<String, String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetEntry {
    pub key: String,
    pub sample: String,
    pub seed: u64,
    pub status: Status,
    pub timings: BTreeMap<String, f64>,
    pub files: BTreeMap<String, String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunManifest {
    pub version: String,
    /// Resolved configuration snapshot.
    pub config: BTreeMap<String, Value>,
    pub datasets: BTreeMap<String, DatasetEntry>,
    pub runs: BTreeMap<String, RunEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

/// Hashes every listed file under `root`.
pub fn hash_files(root: &Path, rel: &[String]) -> Result<BTreeMap<String, String>> {
    rel.iter().map(|r| Ok((r.clone(), hash_file(&root.join(r))?))).collect()
}

/// All listed files exist with their recorded hashes.
pub fn files_intact(root: &Path, files: &BTreeMap<String, String>) -> bool {
    !files.is_empty()
        && files
            .iter()
            .all(|(rel, hash)| hash_file(&root.join(rel)).is_ok_and(|h| &h == hash))
}

fn str_map<V: Into<Value> + Clone>(m: &BTreeMap<String, V>) -> Value {
    Value::Table(m.iter().map(|(k, v)| (k.clone(), v.clone().into())).collect())
}

fn common(
    t: &mut Table,
    status: Status,
    timings: &BTreeMap<String, f64>,
    files: &BTreeMap<String, String>,
    error: &Option<String>,
) {
    t.insert("status".into(), status.as_str().into());
    if let Some(e) = error {
        t.insert("error".into(), e.as_str().into());
    }
    t.insert("timings".into(), str_map(timings));
    t.insert("files".into(), str_map(files));
}

impl RunManifest {
    pub fn to_toml(&self) -> String {
        let mut root = Table::new();
        root.insert("version".into(), self.version.as_str().into());
        root.insert("config".into(), Value::Table(self.config.clone().into_iter().collect()));
        let mut datasets = Table::new();
        for (id, d) in &self.datasets {
            let mut t = Table::new();
            t.insert("key".into(), d.key.as_str().into());
            t.insert("sample".into(), d.sample.as_str().into());
            t.insert("seed".into(), Value::Integer(d.seed as i64));
            common(&mut t, d.status, &d.timings, &d.files, &d.error);
            datasets.insert(id.clone(), Value::Table(t));
        }
        root.insert("datasets".into(), Value::Table(datasets));
        let mut runs = Table::new();
        for (id, r) in &self.runs {
            let mut t = Table::new();
            t.insert("mode".into(), r.mode.as_str().into());
            t.insert("key".into(), r.key.as_str().into());
            t.insert("dataset".into(), r.dataset.as_str().into());
            t.insert("sample".into(), r.sample.as_str().into());
            t.insert("seed".into(), Value::Integer(r.seed as i64));
            if let Some(p) = r.point {
                t.insert("gamma".into(), p.gamma.into());
                t.insert("delta".into(), p.delta.into());
                t.insert("eta".into(), p.eta.into());
            }
            common(&mut t, r.status, &r.timings, &r.files, &r.error);
            runs.insert(id.clone(), Value::Table(t));
        }
        root.insert("runs".into(), Value::Table(runs));
        root.to_string()
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let bad = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg,
        };
        let root: Table = text.parse().map_err(|e: toml::de::Error| bad(e.to_string()))?;
        let field =
            |t: &Table, k: &str| -> Result<Value> { t.get(k).cloned().ok_or_else(|| bad(format!("missing {k}"))) };
        let string = |t: &Table, k: &str| -> Result<String> {
            field(t, k)?
                .as_str()
                .map(str::to_string)
                .ok_or_else(|| bad(format!("{k} is not a string")))
        };
        let float = |t: &Table, k: &str| -> Result<f64> {
            field(t, k)?
                .as_float()
                .ok_or_else(|| bad(format!("{k} is not a float")))
        };
        let seed = |t: &Table| -> Result<u64> {
            field(t, "seed")?
                .as_integer()
                .and_then(|i| u64::try_from(i).ok())
                .ok_or_else(|| bad("seed is not a non-negative integer".into()))
        };
        let table = |t: &Table, k: &str| -> Result<Table> {
            match field(t, k)? {
                Value::Table(x) => Ok(x),
                _ => Err(bad(format!("{k} is not a table"))),
            }
        };
        let timings = |t: &Table| -> Result<BTreeMap<String, f64>> {
            table(t, "timings")?
                .into_iter()
                .map(|(k, v)| Ok((k, v.as_float().ok_or_else(|| bad("timing is not a float".into()))?)))
                .collect()
        };
        let files = |t: &Table| -> Result<BTreeMap<String, String>> {
            table(t, "files")?
                .into_iter()
                .map(|(k, v)| {
                    Ok((
                        k,
                        v.as_str()
                            .ok_or_else(|| bad("hash is not a string".into()))?
                            .to_string(),
                    ))
                })
                .collect()
        };
        let error = |t: &Table| t.get("error").and_then(Value::as_str).map(str::to_string);

        let mut m = RunManifest {
            version: string(&root, "version")?,
            config: table(&root, "config")?.into_iter().collect(),
            ..Default::default()
        };
        for (id, v) in table(&root, "datasets")? {
            let Value::Table(t) = v else {
                return Err(bad(format!("dataset {id} is not a table")));
            };
            m.datasets.insert(
                id,
                DatasetEntry {
                    key: string(&t, "key")?,
                    sample: string(&t, "sample")?,
                    seed: seed(&t)?,
                    status: string(&t, "status")?.parse()?,
                    timings: timings(&t)?,
                    files: files(&t)?,
                    error: error(&t),
                },
            );
        }
        for (id, v) in table(&root, "runs")? {
            let Value::Table(t) = v else {
                return Err(bad(format!("run {id} is not a table")));
            };
            let point = if t.contains_key("gamma") {
                Some(GridPoint {
                    gamma: float(&t, "gamma")?,
                    delta: float(&t, "delta")?,
                    eta: float(&t, "eta")?,
                })
            } else {
                None
            };
            m.runs.insert(
                id,
                RunEntry {
                    mode: string(&t, "mode")?.parse()?,
                    status: string(&t, "status")?.parse()?,
                    key: string(&t, "key")?,
                    dataset: string(&t, "dataset")?,
                    sample: string(&t, "sample")?,
                    seed: seed(&t)?,
                    point,
                    timings: timings(&t)?,
                    files: files(&t)?,
                    error: error(&t),
                },
            );
        }
        Ok(m)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).context(|| format!("reading {}", path.display()))?;
        Self::parse(&path, &text)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        write_atomic(&dir.join(MANIFEST_FILE), self.to_toml().as_bytes())
    }

    pub fn completed_runs(&self) -> impl Iterator<Item = (&String, &RunEntry)> {
        self.runs.iter().filter(|(_, r)| r.status == Status::Completed)
    }

    pub fn failed(&self) -> usize {
        self.runs.values().filter(|r| r.status == Status::Failed).count()
            + self.datasets.values().filter(|d| d.status == Status::Failed).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_round_trips() {
        let mut m = RunManifest {
            version: "1.2.3".into(),
            ..Default::default()
        };
        m.config.insert("sim.B".into(), Value::Integer(10));
        m.datasets.insert(
            "20-60-20_s0".into(),
            DatasetEntry {
                key: "k".into(),
                sample: "20-60-20".into(),
                seed: 0,
                status: Status::Completed,
                timings: [("generate".to_string(), 0.5)].into(),
                files: [("data/x".to_string(), "ab".to_string())].into(),
                error: None,
            },
        );
        m.runs.insert(
            "r".into(),
            RunEntry {
                mode: RunMode::Recsys,
                status: Status::Failed,
                key: "h".into(),
                dataset: "20-60-20_s0".into(),
                sample: "20-60-20".into(),
                seed: 3,
                point: Some(GridPoint {
                    gamma: 0.1,
                    delta: 0.5,
                    eta: 0.0,
                }),
                timings: BTreeMap::new(),
                files: BTreeMap::new(),
                error: Some("boom".into()),
            },
        );
        let text = m.to_toml();
        assert_eq!(RunManifest::parse(Path::new("m"), &text).unwrap(), m);
        assert_eq!(m.failed(), 1);
    }
}
