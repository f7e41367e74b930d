//! Pluggable recommenders.
//!
//! A model is fitted once and then frozen. During simulation every user
//! opens a [`ScoreSession`] seeded with their history; each pick is pushed
//! into the session, so the next top-k query reflects the updated history
//! without retraining.

mod knn;
mod latent;
mod popularity;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use log::info;
use rand::seq::SliceRandom;

use crate::dataset::{write_atomic, InteractionDataset, ItemId, UserId};
use crate::error::{Error, IoContext, Result};
use crate::rng::{domain, substream};
use crate::scalar::Real;

pub use knn::ItemKnnModel;
pub use latent::LatentFactorModel;
pub use popularity::PopularityModel;

const MODEL_MAGIC: &str = "driftsim-model 1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RecommenderKind {
    #[default]
    ItemKnn,
    LatentFactor,
    Popularity,
}

impl RecommenderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RecommenderKind::ItemKnn => "item_knn",
            RecommenderKind::LatentFactor => "latent_factor",
            RecommenderKind::Popularity => "popularity",
        }
    }
}

impl fmt::Display for RecommenderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RecommenderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "item_knn" | "knn" => Ok(RecommenderKind::ItemKnn),
            "latent_factor" | "als" => Ok(RecommenderKind::LatentFactor),
            "popularity" => Ok(RecommenderKind::Popularity),
            other => Err(Error::config(format!("unknown recommender kind {other:?}"))),
        }
    }
}

/// Incremental per-user scoring state.
pub trait ScoreSession<F> {
    /// Appends `item` to the session history.
    fn observe(&mut self, item: ItemId);

    /// Raw score of every catalog item.
    fn raw_scores(&self) -> &[F];
}

pub trait Recommender<F: Real>: Send + Sync + fmt::Debug {
    fn kind(&self) -> RecommenderKind;

    fn num_items(&self) -> usize;

    /// Opens a scoring session for `user` with `history` already observed.
    fn session<'a>(&'a self, user: UserId, history: &[ItemId]) -> Box<dyn ScoreSession<F> + 'a>;

    /// Body of the text model file (after the magic and kind lines).
    fn write_body(&self, out: &mut String);

    /// Ranked list of at most `k` items outside `history`.
    fn top_k(&self, user: UserId, k: usize, history: &[ItemId]) -> RecList<F> {
        let session = self.session(user, history);
        let mut seen = vec![false; self.num_items()];
        history.iter().for_each(|&i| seen[i] = true);
        rank_unseen(session.raw_scores(), &seen, k)
    }

    /// Score of `item` in `[0, 1]`, normalized over the unseen catalog.
    fn score(&self, user: UserId, item: ItemId, history: &[ItemId]) -> F {
        let list = self.top_k(user, self.num_items(), history);
        list.items
            .iter()
            .position(|&i| i == item)
            .map_or(F::zero(), |p| list.scores[p])
    }
}

/// Top-k query result. `scores` are min-shifted and max-divided over the
/// unseen catalog, so they lie in `[0, 1]` and are sorted non-increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct RecList<F> {
    pub items: Vec<ItemId>,
    pub scores: Vec<F>,
    /// Fewer than `k` unseen items were available.
    pub short: bool,
}

impl<F: Real> RecList<F> {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Ranks unseen items by raw score (descending, ties by ascending id) and
/// keeps the first `k`.
pub fn rank_unseen<F: Real>(raw: &[F], seen: &[bool], k: usize) -> RecList<F> {
    let mut candidates: Vec<ItemId> = (0..raw.len()).filter(|&i| !seen[i]).collect();
    let (lo, hi) = candidates
        .iter()
        .fold((F::infinity(), F::neg_infinity()), |(lo, hi), &i| {
            (lo.min(raw[i]), hi.max(raw[i]))
        });
    let order = |a: &ItemId, b: &ItemId| raw[*b].total_cmp_f(raw[*a]).then(a.cmp(b));
    let short = candidates.len() < k;
    if candidates.len() > k && k > 0 {
        candidates.select_nth_unstable_by(k - 1, order);
        candidates.truncate(k);
    } else if k == 0 {
        candidates.clear();
    }
    candidates.sort_unstable_by(order);
    let span = hi - lo;
    let scores = candidates
        .iter()
        .map(|&i| {
            if span > F::zero() {
                (raw[i] - lo) / span
            } else {
                F::zero()
            }
        })
        .collect();
    RecList {
        items: candidates,
        scores,
        short,
    }
}

trait TotalCmp {
    fn total_cmp_f(self, other: Self) -> std::cmp::Ordering;
}

impl<F: Real> TotalCmp for F {
    fn total_cmp_f(self, other: Self) -> std::cmp::Ordering {
        self.partial_cmp(&other)
            .unwrap_or_else(|| self.is_nan().cmp(&other.is_nan()))
    }
}

/// Score-proportional pick distribution over a list. All-zero scores give
/// the uniform distribution.
pub fn list_scores<F: Real>(scores: &[F]) -> Vec<F> {
    let total: F = scores.iter().copied().sum();
    if total > F::zero() {
        scores.iter().map(|&s| s / total).collect()
    } else {
        vec![F::one() / F::from_count(scores.len().max(1)); scores.len()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub kind: RecommenderKind,
    /// Item-kNN neighbourhood size.
    pub neighbors: usize,
    /// Latent-factor rank.
    pub rank: usize,
    pub regularization: f64,
    pub sweeps: usize,
    /// Train, validation and test shares.
    pub split: [f64; 3],
    /// Cutoff for the logged validation recall.
    pub eval_k: usize,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            kind: RecommenderKind::ItemKnn,
            neighbors: 50,
            rank: 16,
            regularization: 0.1,
            sweeps: 10,
            split: [0.8, 0.1, 0.1],
            eval_k: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub validation_recall: f64,
    pub test_recall: f64,
    /// Training objective after each sweep (latent-factor only).
    pub objective: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: InteractionDataset,
    pub validation: Vec<Vec<ItemId>>,
    pub test: Vec<Vec<ItemId>>,
}

/// Random interaction-level split.
pub fn split_dataset(d: &InteractionDataset, shares: [f64; 3], seed: u64) -> Result<Split> {
    let total: f64 = shares.iter().sum();
    if (total - 1.0).abs() > 1e-9 || shares.iter().any(|&s| s < 0.0) {
        return Err(Error::config(format!("split {shares:?} must sum to 1")));
    }
    if d.is_empty() {
        return Err(Error::EmptyDataset("nothing to fit on".into()));
    }
    let mut pairs: Vec<(UserId, ItemId)> = d.pairs().collect();
    pairs.shuffle(&mut substream(seed, domain::SPLIT, 0, 0));
    let n = pairs.len();
    let n_train = (n as f64 * shares[0]).round() as usize;
    let n_val = ((n as f64 * shares[1]).round() as usize).min(n - n_train);
    if n_train == 0 {
        return Err(Error::EmptyDataset("training split is empty".into()));
    }
    let mut validation = vec![Vec::new(); d.num_users()];
    let mut test = vec![Vec::new(); d.num_users()];
    for &(u, i) in &pairs[n_train..n_train + n_val] {
        validation[u].push(i);
    }
    for &(u, i) in &pairs[n_train + n_val..] {
        test[u].push(i);
    }
    validation
        .iter_mut()
        .chain(test.iter_mut())
        .for_each(|v| v.sort_unstable());
    let train = InteractionDataset::from_pairs(d.num_users(), d.num_items(), pairs[..n_train].iter().copied())?;
    Ok(Split {
        train,
        validation,
        test,
    })
}

/// Mean recall@k over users with at least one held-out item.
pub fn recall_at_k<F: Real>(
    model: &dyn Recommender<F>,
    train: &InteractionDataset,
    held_out: &[Vec<ItemId>],
    k: usize,
) -> f64 {
    let mut total = 0.0;
    let mut users = 0usize;
    for (u, held) in held_out.iter().enumerate() {
        if held.is_empty() {
            continue;
        }
        let list = model.top_k(u, k, train.history(u));
        let hits = list.items.iter().filter(|i| held.binary_search(i).is_ok()).count();
        total += hits as f64 / held.len() as f64;
        users += 1;
    }
    if users == 0 {
        0.0
    } else {
        total / users as f64
    }
}

/// Fits the configured model on the training part of an 80/10/10-style
/// split and reports held-out recall.
pub fn fit<F: Real>(d: &InteractionDataset, cfg: &FitConfig) -> Result<(Box<dyn Recommender<F>>, FitReport)> {
    let split = split_dataset(d, cfg.split, cfg.seed)?;
    let mut objective = Vec::new();
    let model: Box<dyn Recommender<F>> = match cfg.kind {
        RecommenderKind::ItemKnn => Box::new(ItemKnnModel::fit(&split.train, cfg.neighbors)?),
        RecommenderKind::Popularity => Box::new(PopularityModel::fit(&split.train)),
        RecommenderKind::LatentFactor => {
            let (m, obj) = LatentFactorModel::fit(&split.train, cfg.rank, cfg.regularization, cfg.sweeps, cfg.seed)?;
            objective = obj;
            Box::new(m)
        }
    };
    let report = FitReport {
        train: split.train.len(),
        validation: split.validation.iter().map(Vec::len).sum(),
        test: split.test.iter().map(Vec::len).sum(),
        validation_recall: recall_at_k(model.as_ref(), &split.train, &split.validation, cfg.eval_k),
        test_recall: recall_at_k(model.as_ref(), &split.train, &split.test, cfg.eval_k),
        objective,
    };
    info!(
        "fitted {} on {} interactions: validation recall@{} = {:.4}",
        cfg.kind, report.train, cfg.eval_k, report.validation_recall
    );
    Ok((model, report))
}

pub fn model_to_text<F: Real>(model: &dyn Recommender<F>) -> String {
    let mut out = format!("{MODEL_MAGIC}\nkind {}\n", model.kind());
    model.write_body(&mut out);
    out
}

pub fn save_model<F: Real>(model: &dyn Recommender<F>, path: &Path) -> Result<()> {
    write_atomic(path, model_to_text(model).as_bytes())
}

pub fn load_model<F: Real>(path: &Path) -> Result<Box<dyn Recommender<F>>> {
    let text = std::fs::read_to_string(path).context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines().enumerate().map(|(n, l)| (n + 1, l));
    let perr = |line: usize, msg: &str| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.to_string(),
    };
    match lines.next() {
        Some((_, MODEL_MAGIC)) => {}
        _ => return Err(perr(1, "not a driftsim model file")),
    }
    let (n, kind_line) = lines.next().ok_or_else(|| perr(2, "missing kind"))?;
    let kind: RecommenderKind = kind_line
        .strip_prefix("kind ")
        .ok_or_else(|| perr(n, "expected \"kind <name>\""))?
        .parse()?;
    Ok(match kind {
        RecommenderKind::ItemKnn => Box::new(ItemKnnModel::read_body(path, &mut lines)?),
        RecommenderKind::LatentFactor => Box::new(LatentFactorModel::read_body(path, &mut lines)?),
        RecommenderKind::Popularity => Box::new(PopularityModel::read_body(path, &mut lines)?),
    })
}

/// Reads a `name value` line.
pub(crate) fn read_field<'a, T: FromStr>(
    path: &Path,
    lines: &mut impl Iterator<Item = (usize, &'a str)>,
    name: &str,
) -> Result<T> {
    let (n, line) = lines.next().ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: format!("missing {name}"),
    })?;
    line.strip_prefix(name)
        .and_then(|rest| rest.trim().parse().ok())
        .ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: n,
            msg: format!("expected \"{name} <value>\", got {line:?}"),
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn list_score_arithmetic() {
        assert_eq!(list_scores(&[2.0f64, 1.0, 1.0]), vec![0.5, 0.25, 0.25]);
        assert_eq!(list_scores(&[0.7f64]), vec![1.0]);
        let u = list_scores(&[0.0f64, 0.0, 0.0]);
        assert!(u.iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn ranking_excludes_seen_and_breaks_ties_by_id() {
        let raw = [5.0f64, 3.0, 1.0];
        let l = rank_unseen(&raw, &[true, false, false], 2);
        assert_eq!(l.items, vec![1, 2]);
        let l = rank_unseen(&[1.0f64, 2.0, 2.0, 0.5], &[false; 4], 2);
        assert_eq!(l.items, vec![1, 2]);
        assert!(!l.short);
    }

    #[test]
    fn short_list_when_catalog_runs_out() {
        let l = rank_unseen(&[1.0f64, 2.0, 3.0], &[true, false, true], 2);
        assert_eq!(l.items, vec![1]);
        assert!(l.short);
    }

    #[test]
    fn negative_raw_scores_are_shifted_into_unit_interval() {
        let l = rank_unseen(&[-3.0f64, -1.0, 1.0], &[false; 3], 3);
        assert_eq!(l.items, vec![2, 1, 0]);
        assert_eq!(l.scores, vec![1.0, 0.5, 0.0]);
    }

    #[test]
    fn kind_names_round_trip() {
        for k in [
            RecommenderKind::ItemKnn,
            RecommenderKind::LatentFactor,
            RecommenderKind::Popularity,
        ] {
            assert_eq!(k.as_str().parse::<RecommenderKind>().unwrap(), k);
        }
        assert!("vae".parse::<RecommenderKind>().is_err());
    }

    #[test]
    fn split_shares_and_empty_train() {
        let d = InteractionDataset::from_histories(50, (0..10).map(|u| (u..u + 20).collect()).collect()).unwrap();
        let s = split_dataset(&d, [0.8, 0.1, 0.1], 1).unwrap();
        assert_eq!(s.train.len(), 160);
        assert_eq!(s.validation.iter().map(Vec::len).sum::<usize>(), 20);
        assert_eq!(s.test.iter().map(Vec::len).sum::<usize>(), 20);
        assert!(matches!(
            split_dataset(&d, [0.0, 0.5, 0.5], 1),
            Err(Error::EmptyDataset(_))
        ));
        let empty = InteractionDataset::from_pairs(2, 2, []).unwrap();
        assert!(split_dataset(&empty, [0.8, 0.1, 0.1], 1).is_err());
    }

    fn toy() -> InteractionDataset {
        InteractionDataset::from_histories(
            12,
            (0..30)
                .map(|u| (0..12).filter(|i| (i * 7 + u * 3) % 5 < 2).collect())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn model_files_round_trip() {
        let d = toy();
        let dir = tempfile::tempdir().unwrap();
        for kind in [
            RecommenderKind::ItemKnn,
            RecommenderKind::LatentFactor,
            RecommenderKind::Popularity,
        ] {
            let cfg = FitConfig {
                kind,
                rank: 3,
                neighbors: 4,
                ..FitConfig::default()
            };
            let (m, _) = fit::<f64>(&d, &cfg).unwrap();
            let p = dir.path().join(format!("{kind}.model"));
            save_model(m.as_ref(), &p).unwrap();
            let back = load_model::<f64>(&p).unwrap();
            assert_eq!(back.kind(), kind);
            assert_eq!(model_to_text(back.as_ref()), model_to_text(m.as_ref()));
            for u in 0..5 {
                assert_eq!(back.top_k(u, 4, d.history(u)), m.top_k(u, 4, d.history(u)));
            }
        }
    }

    proptest! {
        #[test]
        fn top_k_never_returns_history(
            hist in proptest::collection::btree_set(0usize..12, 0..11),
            extra in proptest::collection::vec(0usize..12, 0..5),
            k in 1usize..8,
            kind in 0usize..3,
        ) {
            let d = toy();
            let kind = [RecommenderKind::ItemKnn, RecommenderKind::LatentFactor, RecommenderKind::Popularity][kind];
            let cfg = FitConfig { kind, rank: 3, neighbors: 4, ..FitConfig::default() };
            let (m, _) = fit::<f64>(&d, &cfg).unwrap();
            let mut h: Vec<usize> = hist.into_iter().collect();
            for e in extra {
                if !h.contains(&e) { h.push(e); }
                let l = m.top_k(0, k, &h);
                prop_assert!(l.items.iter().all(|i| !h.contains(i)));
                prop_assert!(l.scores.windows(2).all(|w| w[0] >= w[1]));
                prop_assert!(l.scores.iter().all(|s| s.is_finite() && *s >= 0.0 && *s <= 1.0));
                prop_assert_eq!(l.len(), k.min(12 - h.len()));
            }
        }
    }
}
