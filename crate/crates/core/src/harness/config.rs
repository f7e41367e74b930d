//! Experiment configuration: a flat key space with dotted sections.
//!
//! Files use TOML syntax; `[sim]` followed by `gamma = 0.1` and a top-level
//! `sim.gamma = 0.1` name the same key. Grid keys accept a scalar or a list.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use toml::Value;

use crate::dataset::Thresholds;
use crate::error::{Error, IoContext, Result};
use crate::metrics::{Estimator, WalkConfig};
use crate::organic::{CovarianceNorm, OrganicConfig, PerceptionMode, ScoreDirection};
use crate::recommender::{FitConfig, RecommenderKind};
use crate::simulator::ChoiceParams;
use crate::synthgen::{SynthConfig, HARMFUL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl Precision {
    pub fn as_str(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

/// Where interactions, labels and features come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Regenerated for every (proportion, seed) pair.
    Synthetic(SynthConfig),
    /// A fixed dataset; user and item feature rows follow ascending
    /// external id.
    Files {
        interactions: PathBuf,
        labels: PathBuf,
        user_features: PathBuf,
        item_features: PathBuf,
        thresholds: Thresholds,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataSource,
    /// Stratum shares per synthetic sample; ignored for file data.
    pub proportions: Vec<[f64; 3]>,
    pub seeds: Vec<u64>,
    pub gammas: Vec<f64>,
    pub deltas: Vec<f64>,
    pub etas: Vec<f64>,
    pub rounds: usize,
    pub steps: usize,
    pub k: usize,
    pub recommender: FitConfig,
    pub organic: OrganicConfig,
    pub walks: WalkConfig,
    /// Category the drift metrics aim at.
    pub target: String,
    pub precision: Precision,
    pub write_graphs: bool,
    pub write_trace: bool,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let sim = ChoiceParams::default();
        Self {
            data: DataSource::Synthetic(SynthConfig::default()),
            proportions: vec![[0.2, 0.6, 0.2]],
            seeds: vec![0],
            gammas: vec![sim.gamma],
            deltas: vec![sim.delta],
            etas: vec![sim.eta],
            rounds: sim.rounds,
            steps: sim.steps,
            k: sim.k,
            recommender: FitConfig::default(),
            organic: OrganicConfig::default(),
            walks: WalkConfig::default(),
            target: HARMFUL.to_string(),
            precision: Precision::F64,
            write_graphs: true,
            write_trace: false,
            out: PathBuf::from("results"),
        }
    }
}

/// One `(γ, δ, η)` combination.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub gamma: f64,
    pub delta: f64,
    pub eta: f64,
}

impl ExperimentConfig {
    /// Shrinks to 300 users, 500 items, `B = 10`, `T = 30`.
    pub fn apply_desk_scale(&mut self) {
        if let DataSource::Synthetic(s) = &mut self.data {
            s.num_users = 300;
            s.num_items = 500;
        }
        self.rounds = 10;
        self.steps = 30;
    }

    pub fn grid(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for &gamma in &self.gammas {
            for &delta in &self.deltas {
                for &eta in &self.etas {
                    out.push(GridPoint { gamma, delta, eta });
                }
            }
        }
        out
    }

    pub fn choice_params(&self, p: GridPoint) -> ChoiceParams {
        ChoiceParams {
            gamma: p.gamma,
            eta: p.eta,
            delta: p.delta,
            rounds: self.rounds,
            steps: self.steps,
            k: self.k,
        }
    }

    /// Synthetic config for one sample, or `None` for file data.
    pub fn synth_for(&self, proportions: [f64; 3], seed: u64) -> Option<SynthConfig> {
        match &self.data {
            DataSource::Synthetic(s) => Some(SynthConfig {
                proportions,
                seed,
                ..s.clone()
            }),
            DataSource::Files { .. } => None,
        }
    }

    /// Proportion rows actually swept (one placeholder for file data).
    pub fn samples(&self) -> Vec<Option<[f64; 3]>> {
        match self.data {
            DataSource::Synthetic(_) => self.proportions.iter().copied().map(Some).collect(),
            DataSource::Files { .. } => vec![None],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() || self.gammas.is_empty() || self.deltas.is_empty() || self.etas.is_empty() {
            return Err(Error::config("seed and grid lists must be non-empty"));
        }
        for p in self.grid() {
            self.choice_params(p).validate()?;
        }
        self.walks.validate()?;
        if let DataSource::Synthetic(s) = &self.data {
            if self.proportions.is_empty() {
                return Err(Error::config("proportions list must be non-empty"));
            }
            for &p in &self.proportions {
                SynthConfig {
                    proportions: p,
                    ..s.clone()
                }
                .validate()?;
            }
        }
        Ok(())
    }

    /// Resolved configuration as flat `key = value` pairs.
    pub fn snapshot(&self) -> BTreeMap<String, Value> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: Value| {
            m.insert(k.to_string(), v);
        };
        let floats = |v: &[f64]| Value::Array(v.iter().map(|&x| Value::Float(x)).collect());
        match &self.data {
            DataSource::Synthetic(s) => {
                put("synth.users", int(s.num_users));
                put("synth.items", int(s.num_items));
                put("synth.latent_dim", int(s.latent_dim));
                put("synth.user_powerlaw_alpha", Value::Float(s.user_powerlaw_alpha));
                put("synth.item_powerlaw_alpha", Value::Float(s.item_powerlaw_alpha));
                put("synth.harmful_item_fraction", Value::Float(s.harmful_item_fraction));
                put("synth.min_history", int(s.min_history));
                put("synth.mean_history", Value::Float(s.mean_history));
                put("synth.max_history", int(s.max_history));
                put("synth.concentration_preferred", Value::Float(s.concentration_preferred));
                put("synth.concentration_off", Value::Float(s.concentration_off));
                put("population.low", Value::Float(s.thresholds.low));
                put("population.high", Value::Float(s.thresholds.high));
                put(
                    "experiment.proportions",
                    Value::Array(self.proportions.iter().map(|p| floats(p)).collect()),
                );
            }
            DataSource::Files {
                interactions,
                labels,
                user_features,
                item_features,
                thresholds,
            } => {
                put("data.interactions", path_value(interactions));
                put("data.labels", path_value(labels));
                put("data.user_features", path_value(user_features));
                put("data.item_features", path_value(item_features));
                put("population.low", Value::Float(thresholds.low));
                put("population.high", Value::Float(thresholds.high));
            }
        }
        put(
            "sim.seed",
            Value::Array(self.seeds.iter().map(|&s| Value::Integer(s as i64)).collect()),
        );
        put("sim.gamma", floats(&self.gammas));
        put("sim.delta", floats(&self.deltas));
        put("sim.eta", floats(&self.etas));
        put("sim.B", int(self.rounds));
        put("sim.T", int(self.steps));
        put("sim.precision", Value::String(self.precision.as_str().into()));
        let r = &self.recommender;
        put("recommender.kind", Value::String(r.kind.as_str().into()));
        put("recommender.k", int(self.k));
        put("recommender.neighbors", int(r.neighbors));
        put("recommender.rank", int(r.rank));
        put("recommender.regularization", Value::Float(r.regularization));
        put("recommender.sweeps", int(r.sweeps));
        put("recommender.split", floats(&r.split));
        put("recommender.eval_k", int(r.eval_k));
        let o = &self.organic;
        put("organic.xi", Value::Float(o.xi));
        put("organic.noise_scale", Value::Float(o.noise_scale));
        put(
            "organic.covariance",
            Value::String(covariance_name(o.covariance).into()),
        );
        put(
            "organic.score_direction",
            Value::String(direction_name(o.direction).into()),
        );
        put(
            "organic.perception",
            Value::String(perception_name(o.perception).into()),
        );
        put("metrics.walks", int(self.walks.num_walks));
        put("metrics.walk_length", int(self.walks.walk_length));
        put("metrics.estimator", Value::String(self.walks.estimator.as_str().into()));
        put("metrics.target", Value::String(self.target.clone()));
        put("output.graphs", Value::Boolean(self.write_graphs));
        put("output.trace", Value::Boolean(self.write_trace));
        m
    }
}

fn int(n: usize) -> Value {
    Value::Integer(n as i64)
}

fn path_value(p: &Path) -> Value {
    Value::String(p.display().to_string())
}

fn covariance_name(c: CovarianceNorm) -> &'static str {
    match c {
        CovarianceNorm::Empirical => "empirical",
        CovarianceNorm::Raw => "raw",
    }
}

fn direction_name(d: ScoreDirection) -> &'static str {
    match d {
        ScoreDirection::Affinity => "affinity",
        ScoreDirection::RawDistance => "raw_distance",
    }
}

fn perception_name(p: PerceptionMode) -> &'static str {
    match p {
        PerceptionMode::PerRun => "per_run",
        PerceptionMode::PerRound => "per_round",
    }
}

/// Flattens nested tables into dotted keys.
pub fn flatten(table: &toml::Table) -> BTreeMap<String, Value> {
    fn walk(prefix: &str, t: &toml::Table, out: &mut BTreeMap<String, Value>) {
        for (k, v) in t {
            let key = if prefix.is_empty() {
                k.clone()
            } else {
                format!("{prefix}.{k}")
            };
            match v {
                Value::Table(sub) => walk(&key, sub, out),
                other => {
                    out.insert(key, other.clone());
                }
            }
        }
    }
    let mut out = BTreeMap::new();
    walk("", table, &mut out);
    out
}

pub fn parse_str(text: &str) -> Result<ExperimentConfig> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
    from_keys(flatten(&table), None)
}

/// Reads a config file; relative data paths resolve against its directory.
pub fn load(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).context(|| format!("reading {}", path.display()))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::config(format!("{}: {e}", path.display())))?;
    from_keys(flatten(&table), path.parent())
}

/// Builds a config from flat keys over the defaults. Unknown keys are an
/// error.
pub fn from_keys(mut keys: BTreeMap<String, Value>, base: Option<&Path>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    let mut synth = SynthConfig::default();
    let mut k = Keys { map: &mut keys };

    k.usize("synth.users", &mut synth.num_users)?;
    k.usize("synth.items", &mut synth.num_items)?;
    k.usize("synth.latent_dim", &mut synth.latent_dim)?;
    k.f64("synth.user_powerlaw_alpha", &mut synth.user_powerlaw_alpha)?;
    k.f64("synth.item_powerlaw_alpha", &mut synth.item_powerlaw_alpha)?;
    k.f64("synth.harmful_item_fraction", &mut synth.harmful_item_fraction)?;
    k.usize("synth.min_history", &mut synth.min_history)?;
    k.f64("synth.mean_history", &mut synth.mean_history)?;
    k.usize("synth.max_history", &mut synth.max_history)?;
    k.f64("synth.concentration_preferred", &mut synth.concentration_preferred)?;
    k.f64("synth.concentration_off", &mut synth.concentration_off)?;
    let mut thresholds = Thresholds::default();
    k.f64("population.low", &mut thresholds.low)?;
    k.f64("population.high", &mut thresholds.high)?;
    synth.thresholds = thresholds;

    if let Some(v) = k.take("experiment.proportions") {
        cfg.proportions = parse_proportions(&v)?;
    }
    if let Some(v) = k.take("sim.seed") {
        cfg.seeds = list(&v, "sim.seed", as_u64)?;
    }
    if let Some(v) = k.take("sim.gamma") {
        cfg.gammas = list(&v, "sim.gamma", as_f64)?;
    }
    if let Some(v) = k.take("sim.delta") {
        cfg.deltas = list(&v, "sim.delta", as_f64)?;
    }
    if let Some(v) = k.take("sim.eta") {
        cfg.etas = list(&v, "sim.eta", as_f64)?;
    }
    k.usize("sim.B", &mut cfg.rounds)?;
    k.usize("sim.T", &mut cfg.steps)?;
    if let Some(s) = k.string("sim.precision")? {
        cfg.precision = match s.as_str() {
            "f32" => Precision::F32,
            "f64" => Precision::F64,
            other => return Err(Error::config(format!("sim.precision: unknown value {other:?}"))),
        };
    }

    if let Some(s) = k.string("recommender.kind")? {
        cfg.recommender.kind = s.parse::<RecommenderKind>()?;
    }
    k.usize("recommender.k", &mut cfg.k)?;
    k.usize("recommender.neighbors", &mut cfg.recommender.neighbors)?;
    k.usize("recommender.rank", &mut cfg.recommender.rank)?;
    k.f64("recommender.regularization", &mut cfg.recommender.regularization)?;
    k.usize("recommender.sweeps", &mut cfg.recommender.sweeps)?;
    k.usize("recommender.eval_k", &mut cfg.recommender.eval_k)?;
    if let Some(v) = k.take("recommender.split") {
        let s = list(&v, "recommender.split", as_f64)?;
        cfg.recommender.split = s
            .try_into()
            .map_err(|_| Error::config("recommender.split needs three shares"))?;
    }

    k.f64("organic.xi", &mut cfg.organic.xi)?;
    k.f64("organic.noise_scale", &mut cfg.organic.noise_scale)?;
    if let Some(s) = k.string("organic.covariance")? {
        cfg.organic.covariance = match s.as_str() {
            "empirical" => CovarianceNorm::Empirical,
            "raw" => CovarianceNorm::Raw,
            other => return Err(Error::config(format!("organic.covariance: unknown value {other:?}"))),
        };
    }
    if let Some(s) = k.string("organic.score_direction")? {
        cfg.organic.direction = match s.as_str() {
            "affinity" => ScoreDirection::Affinity,
            "raw_distance" => ScoreDirection::RawDistance,
            other => {
                return Err(Error::config(format!(
                    "organic.score_direction: unknown value {other:?}"
                )))
            }
        };
    }
    if let Some(s) = k.string("organic.perception")? {
        cfg.organic.perception = match s.as_str() {
            "per_run" => PerceptionMode::PerRun,
            "per_round" => PerceptionMode::PerRound,
            other => return Err(Error::config(format!("organic.perception: unknown value {other:?}"))),
        };
    }

    k.usize("metrics.walks", &mut cfg.walks.num_walks)?;
    k.usize("metrics.walk_length", &mut cfg.walks.walk_length)?;
    if let Some(s) = k.string("metrics.estimator")? {
        cfg.walks.estimator = s.parse::<Estimator>()?;
    }
    if let Some(s) = k.string("metrics.target")? {
        cfg.target = s;
    }
    k.bool("output.graphs", &mut cfg.write_graphs)?;
    k.bool("output.trace", &mut cfg.write_trace)?;
    if let Some(s) = k.string("output.dir")? {
        cfg.out = resolve(base, &s);
    }

    let files = [
        "data.interactions",
        "data.labels",
        "data.user_features",
        "data.item_features",
    ];
    let given: Vec<Option<String>> = files.iter().map(|f| k.string(f)).collect::<Result<_>>()?;
    cfg.data = match given.iter().filter(|g| g.is_some()).count() {
        0 => DataSource::Synthetic(synth),
        4 => {
            let p: Vec<PathBuf> = given.into_iter().map(|g| resolve(base, &g.unwrap())).collect();
            DataSource::Files {
                interactions: p[0].clone(),
                labels: p[1].clone(),
                user_features: p[2].clone(),
                item_features: p[3].clone(),
                thresholds,
            }
        }
        _ => return Err(Error::config(format!("file data needs all of {}", files.join(", ")))),
    };

    if let Some(unknown) = keys.keys().next() {
        return Err(Error::config(format!("unknown key {unknown:?}")));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn resolve(base: Option<&Path>, s: &str) -> PathBuf {
    let p = PathBuf::from(s);
    match base {
        Some(b) if p.is_relative() => b.join(p),
        _ => p,
    }
}

struct Keys<'a> {
    map: &'a mut BTreeMap<String, Value>,
}

impl Keys<'_> {
    fn take(&mut self, key: &str) -> Option<Value> {
        self.map.remove(key)
    }

    fn usize(&mut self, key: &str, slot: &mut usize) -> Result<()> {
        if let Some(v) = self.take(key) {
            *slot = as_u64(&v).ok_or_else(|| type_error(key, "a non-negative integer"))? as usize;
        }
        Ok(())
    }

    fn f64(&mut self, key: &str, slot: &mut f64) -> Result<()> {
        if let Some(v) = self.take(key) {
            *slot = as_f64(&v).ok_or_else(|| type_error(key, "a number"))?;
        }
        Ok(())
    }

    fn bool(&mut self, key: &str, slot: &mut bool) -> Result<()> {
        if let Some(v) = self.take(key) {
            *slot = v.as_bool().ok_or_else(|| type_error(key, "true or false"))?;
        }
        Ok(())
    }

    fn string(&mut self, key: &str) -> Result<Option<String>> {
        self.take(key)
            .map(|v| {
                v.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| type_error(key, "a string"))
            })
            .transpose()
    }
}

fn type_error(key: &str, want: &str) -> Error {
    Error::config(format!("{key} must be {want}"))
}

fn as_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Float(f) => Some(*f),
        Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

fn as_u64(v: &Value) -> Option<u64> {
    v.as_integer().and_then(|i| u64::try_from(i).ok())
}

fn list<T>(v: &Value, key: &str, conv: fn(&Value) -> Option<T>) -> Result<Vec<T>> {
    let items: Vec<&Value> = match v {
        Value::Array(a) => a.iter().collect(),
        other => vec![other],
    };
    items
        .into_iter()
        .map(|x| conv(x).ok_or_else(|| Error::config(format!("{key}: unexpected value {x}"))))
        .collect()
}

/// Stratum shares in any positive scale (`[5, 90, 5]` or
/// `[0.05, 0.9, 0.05]`), normalized to sum to one.
fn parse_proportions(v: &Value) -> Result<Vec<[f64; 3]>> {
    let rows = match v {
        Value::Array(a) if a.iter().all(|x| x.is_array()) => a.clone(),
        Value::Array(_) => vec![v.clone()],
        _ => return Err(Error::config("experiment.proportions must be a list of triples")),
    };
    rows.iter()
        .map(|row| {
            let xs = list(row, "experiment.proportions", as_f64)?;
            let [a, b, c]: [f64; 3] = xs
                .try_into()
                .map_err(|_| Error::config("experiment.proportions entries need three shares"))?;
            let total = a + b + c;
            if a < 0.0 || b < 0.0 || c < 0.0 || total <= 0.0 {
                return Err(Error::config("experiment.proportions shares must be non-negative"));
            }
            Ok([a / total, b / total, c / total])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_and_dotted_keys_agree() {
        let a = parse_str("[sim]\ngamma = [0.0, 0.1]\nB = 3\n").unwrap();
        let b = parse_str("sim.gamma = [0.0, 0.1]\nsim.B = 3\n").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.gammas, vec![0.0, 0.1]);
        assert_eq!(a.rounds, 3);
    }

    #[test]
    fn scalars_become_single_point_grids() {
        let c = parse_str("sim.eta = 0.05\nsim.seed = 7\n").unwrap();
        assert_eq!(c.etas, vec![0.05]);
        assert_eq!(c.seeds, vec![7]);
        assert_eq!(c.grid().len(), 1);
    }

    #[test]
    fn proportions_are_normalized() {
        let c = parse_str("experiment.proportions = [[5, 90, 5], [1, 1, 1]]\n").unwrap();
        assert_eq!(c.proportions[0], [0.05, 0.9, 0.05]);
        assert!((c.proportions[1][0] - 1.0 / 3.0).abs() < 1e-15);
        let single = parse_str("experiment.proportions = [20, 60, 20]\n").unwrap();
        assert_eq!(single.proportions, vec![[0.2, 0.6, 0.2]]);
    }

    #[test]
    fn bad_keys_and_values_are_config_errors() {
        for text in [
            "sim.gama = 0.1",
            "sim.gamma = 1.5",
            "sim.B = -1",
            "recommender.kind = \"svd\"",
            "metrics.walks = 0",
            "sim.gamma = []",
            "data.interactions = \"x.tsv\"",
            "not toml at all [",
        ] {
            let err = parse_str(text).unwrap_err();
            assert!(err.is_config(), "{text}: {err}");
        }
    }

    #[test]
    fn snapshot_round_trips() {
        let c = parse_str(
            "sim.gamma = [0.0, 0.05]\nsim.delta = [0.5, 1.0]\nrecommender.kind = \"latent_factor\"\n\
             metrics.estimator = \"monte_carlo\"\nexperiment.proportions = [[0.05, 0.9, 0.05]]\n",
        )
        .unwrap();
        let back = from_keys(c.snapshot(), None).unwrap();
        assert_eq!(
            back,
            ExperimentConfig {
                out: back.out.clone(),
                ..c
            }
        );
    }

    #[test]
    fn desk_scale_preset() {
        let mut c = ExperimentConfig::default();
        c.apply_desk_scale();
        let DataSource::Synthetic(s) = &c.data else {
            unreachable!()
        };
        assert_eq!((s.num_users, s.num_items, c.rounds, c.steps), (300, 500, 10, 30));
    }

    #[test]
    fn grid_is_cartesian() {
        let c = parse_str("sim.gamma = [0.0, 0.05, 0.1]\nsim.delta = [0.5, 0.75, 1.0]\n").unwrap();
        assert_eq!(c.grid().len(), 9);
    }
}
