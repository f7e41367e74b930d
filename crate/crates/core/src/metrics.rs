//! Drift metrics over simulated user graphs.
//!
//! `Pr(I_j | I_k)` is the probability that a walk of fixed length `L`,
//! started uniformly on the graph nodes of category `k`, ends on a node of
//! category `j`. A walk that reaches a dangling node stays there. The table
//! is computed either exactly, by pushing the start distribution through
//! the transition matrix `L` times, or by Monte-Carlo walks.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::dataset::{CategoryId, ItemId, Labeling};
use crate::error::{Error, Result};
use crate::graph::UserGraph;
use crate::rng::{domain, substream};
use crate::scalar::Field;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Estimator {
    MonteCarlo,
    #[default]
    Exact,
}

impl Estimator {
    pub fn as_str(self) -> &'static str {
        match self {
            Estimator::MonteCarlo => "monte_carlo",
            Estimator::Exact => "exact",
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "monte_carlo" | "mc" => Ok(Estimator::MonteCarlo),
            "exact" => Ok(Estimator::Exact),
            other => Err(Error::config(format!("unknown estimator {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WalkConfig {
    /// Walks per start category (Monte-Carlo only).
    pub num_walks: usize,
    pub walk_length: usize,
    pub estimator: Estimator,
    pub seed: u64,
}

impl Default for WalkConfig {
    fn default() -> Self {
        Self {
            num_walks: 10_000,
            walk_length: 10,
            estimator: Estimator::Exact,
            seed: 0,
        }
    }
}

impl WalkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_walks == 0 || self.walk_length == 0 {
            return Err(Error::config("num_walks and walk_length must be at least 1"));
        }
        Ok(())
    }
}

/// `Pr(I_end | I_start)`, indexed `[start][end]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EndTable<T> {
    pub probs: Vec<Vec<T>>,
    /// Start categories with at least one node in the graph.
    pub present: Vec<bool>,
    /// Walks per start category behind each row (Monte-Carlo only).
    pub walks: Option<usize>,
}

impl<T: Field> EndTable<T> {
    pub fn get(&self, end: CategoryId, start: CategoryId) -> &T {
        &self.probs[start][end]
    }

    /// Every category appeared as a start.
    pub fn is_complete(&self) -> bool {
        self.present.iter().all(|&p| p)
    }
}

fn category_nodes<T: Field>(g: &UserGraph<T>, n_categories: usize) -> Vec<Vec<usize>> {
    let mut by_cat = vec![Vec::new(); n_categories];
    for n in 0..g.num_nodes() {
        by_cat[g.label(n)].push(n);
    }
    by_cat
}

/// Exact end-category distribution after `walk_length` steps.
pub fn end_probabilities_exact<T: Field>(
    g: &UserGraph<T>,
    labeling: &Labeling,
    walk_length: usize,
) -> Result<EndTable<T>> {
    if g.num_nodes() == 0 {
        return Err(Error::EmptyGraph);
    }
    let n_cat = labeling.num_categories();
    let by_cat = category_nodes(g, n_cat);
    let mut probs = vec![vec![T::zero(); n_cat]; n_cat];
    let mut present = vec![false; n_cat];
    for (k, start) in by_cat.iter().enumerate() {
        if start.is_empty() {
            continue;
        }
        present[k] = true;
        let share = T::one() / T::from_count(start.len() as u64);
        let mut v = vec![T::zero(); g.num_nodes()];
        for &n in start {
            v[n] = share.clone();
        }
        for _ in 0..walk_length {
            let mut next = vec![T::zero(); g.num_nodes()];
            for (a, mass) in v.iter().enumerate() {
                if *mass == T::zero() {
                    continue;
                }
                if g.is_dangling(a) {
                    next[a] = next[a].clone() + mass.clone();
                    continue;
                }
                for (b, p, _) in g.row(a) {
                    next[*b] = next[*b].clone() + mass.clone() * p.clone();
                }
            }
            v = next;
        }
        for (n, mass) in v.into_iter().enumerate() {
            let j = g.label(n);
            probs[k][j] = probs[k][j].clone() + mass;
        }
    }
    Ok(EndTable {
        probs,
        present,
        walks: None,
    })
}

/// Monte-Carlo estimate of the end table. `stream` selects the RNG
/// substream (usually the user id).
pub fn end_probabilities_mc<T: Field>(
    g: &UserGraph<T>,
    labeling: &Labeling,
    cfg: &WalkConfig,
    stream: u64,
) -> Result<EndTable<f64>> {
    cfg.validate()?;
    if g.num_nodes() == 0 {
        return Err(Error::EmptyGraph);
    }
    let n_cat = labeling.num_categories();
    let by_cat = category_nodes(g, n_cat);
    // cumulative transition rows for inverse-CDF sampling
    let cdf: Vec<Vec<(usize, f64)>> = (0..g.num_nodes())
        .map(|a| {
            let mut acc = 0.0;
            g.row(a)
                .iter()
                .map(|(b, p, _)| {
                    acc += p.to_f64_lossy();
                    (*b, acc)
                })
                .collect()
        })
        .collect();
    let mut probs = vec![vec![0.0; n_cat]; n_cat];
    let mut present = vec![false; n_cat];
    for (k, start) in by_cat.iter().enumerate() {
        if start.is_empty() {
            continue;
        }
        present[k] = true;
        let mut rng = substream(cfg.seed, domain::WALKS, stream, k as u64);
        let mut ends = vec![0u64; n_cat];
        for _ in 0..cfg.num_walks {
            let mut node = start[rng.random_range(0..start.len())];
            for _ in 0..cfg.walk_length {
                let row = &cdf[node];
                let Some(&(_, total)) = row.last() else {
                    break;
                };
                let u = rng.random::<f64>() * total;
                node = row.iter().find(|e| u < e.1).unwrap_or(row.last().unwrap()).0;
            }
            ends[g.label(node)] += 1;
        }
        for (j, c) in ends.into_iter().enumerate() {
            probs[k][j] = c as f64 / cfg.num_walks as f64;
        }
    }
    Ok(EndTable {
        probs,
        present,
        walks: Some(cfg.num_walks),
    })
}

/// `Π_i Pr(I_c̃ | I_i) − Σ_{j≠c̃} Π_k Pr(I_j | I_k)`.
pub fn ads_from_table<T: Field>(table: &EndTable<T>, target: CategoryId) -> T {
    let n = table.probs.len();
    let product = |end: CategoryId| (0..n).fold(T::one(), |acc, start| acc * table.get(end, start).clone());
    (0..n)
        .filter(|&j| j != target)
        .fold(product(target), |acc, j| acc - product(j))
}

/// Delta-method standard error of the Monte-Carlo ADS, treating each start
/// category's end counts as an independent multinomial sample.
fn ads_stderr(table: &EndTable<f64>, target: CategoryId) -> f64 {
    let Some(walks) = table.walks else {
        return 0.0;
    };
    let n = table.probs.len();
    let partial_product = |end: CategoryId, skip: CategoryId| -> f64 {
        (0..n).filter(|&s| s != skip).map(|s| table.probs[s][end]).product()
    };
    let mut var = 0.0;
    for start in 0..n {
        if !table.present[start] {
            continue;
        }
        // gradient of ADS with respect to Pr(end | start)
        let grad: Vec<f64> = (0..n)
            .map(|end| {
                let g = partial_product(end, start);
                if end == target {
                    g
                } else {
                    -g
                }
            })
            .collect();
        let p = &table.probs[start];
        for a in 0..n {
            for b in 0..n {
                let cov = if a == b { p[a] * (1.0 - p[a]) } else { -p[a] * p[b] };
                var += grad[a] * grad[b] * cov / walks as f64;
            }
        }
    }
    var.max(0.0).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdsResult {
    pub value: f64,
    /// `Pr(I_end | I_start)`, `[start][end]`.
    pub table: Vec<Vec<f64>>,
    pub estimator: Estimator,
    /// Monte-Carlo standard error; zero for the exact estimator.
    pub stderr: f64,
    /// Some start category had no node; its terms were taken as zero.
    pub partial: bool,
}

/// Algorithmic drift score of `g` towards `target`.
pub fn ads<T: Field>(
    g: &UserGraph<T>,
    labeling: &Labeling,
    target: CategoryId,
    cfg: &WalkConfig,
    stream: u64,
) -> Result<AdsResult> {
    if target >= labeling.num_categories() {
        return Err(Error::UnknownCategory(target.to_string()));
    }
    let table: EndTable<f64> = match cfg.estimator {
        Estimator::Exact => {
            let t = end_probabilities_exact(g, labeling, cfg.walk_length)?;
            EndTable {
                probs: t
                    .probs
                    .iter()
                    .map(|row| row.iter().map(Field::to_f64_lossy).collect())
                    .collect(),
                present: t.present,
                walks: None,
            }
        }
        Estimator::MonteCarlo => end_probabilities_mc(g, labeling, cfg, stream)?,
    };
    Ok(AdsResult {
        value: ads_from_table(&table, target),
        stderr: ads_stderr(&table, target),
        partial: !table.is_complete(),
        estimator: cfg.estimator,
        table: table.probs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DtcResult {
    pub value: f64,
    /// Target share of `D_u`.
    pub before: f64,
    /// Target share of `Î_u ∪ D_u`.
    pub after: f64,
}

/// Delta target consumption: change of the target share from `D_u` to
/// `Î_u ∪ D_u`. Both slices must be sorted.
pub fn dtc(history: &[ItemId], simulated: &[ItemId], labeling: &Labeling, target: CategoryId) -> Result<DtcResult> {
    if history.is_empty() {
        return Err(Error::ShortHistory {
            user: usize::MAX,
            len: 0,
            min: 1,
        });
    }
    let is_target = |i: &&ItemId| labeling.label(**i) == target;
    let before_hits = history.iter().filter(is_target).count();
    let extra: Vec<ItemId> = simulated
        .iter()
        .copied()
        .filter(|i| history.binary_search(i).is_err())
        .collect();
    let after_hits = before_hits + extra.iter().filter(is_target).count();
    let before = before_hits as f64 / history.len() as f64;
    let after = after_hits as f64 / (history.len() + extra.len()) as f64;
    Ok(DtcResult {
        value: after - before,
        before,
        after,
    })
}
