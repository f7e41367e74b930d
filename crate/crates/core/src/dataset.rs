//! Binary interaction histories, item categories and user strata.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, IoContext, Result};

pub type UserId = usize;
pub type ItemId = usize;
pub type CategoryId = usize;

/// Default lower bound on `|D_u|`.
pub const DEFAULT_MIN_HISTORY: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    /// One `user_id<TAB>item_id` pair per line.
    TsvPairs,
}

/// Sparse binary user-item matrix. Ids are dense and 0-based; the external
/// ids seen on load are kept in the remap tables.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionDataset {
    num_items: usize,
    /// Sorted, duplicate free.
    histories: Vec<Vec<ItemId>>,
    external_users: Vec<u64>,
    external_items: Vec<u64>,
}

impl InteractionDataset {
    /// Builds a dataset from dense pairs. Duplicates collapse into one
    /// interaction.
    pub fn from_pairs(
        num_users: usize,
        num_items: usize,
        pairs: impl IntoIterator<Item = (UserId, ItemId)>,
    ) -> Result<Self> {
        let mut histories = vec![Vec::new(); num_users];
        for (u, i) in pairs {
            if u >= num_users || i >= num_items {
                return Err(Error::config(format!(
                    "pair ({u}, {i}) outside {num_users} users x {num_items} items"
                )));
            }
            histories[u].push(i);
        }
        for h in &mut histories {
            h.sort_unstable();
            h.dedup();
        }
        Ok(Self {
            num_items,
            histories,
            external_users: (0..num_users as u64).collect(),
            external_items: (0..num_items as u64).collect(),
        })
    }

    pub fn from_histories(num_items: usize, histories: Vec<Vec<ItemId>>) -> Result<Self> {
        let pairs: Vec<(UserId, ItemId)> = histories
            .iter()
            .enumerate()
            .flat_map(|(u, h)| h.iter().map(move |&i| (u, i)))
            .collect();
        Self::from_pairs(histories.len(), num_items, pairs)
    }

    pub fn num_users(&self) -> usize {
        self.histories.len()
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    /// Number of distinct interactions.
    pub fn len(&self) -> usize {
        self.histories.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `D_u`, sorted ascending.
    pub fn history(&self, user: UserId) -> &[ItemId] {
        &self.histories[user]
    }

    pub fn histories(&self) -> &[Vec<ItemId>] {
        &self.histories
    }

    pub fn contains(&self, user: UserId, item: ItemId) -> bool {
        self.histories[user].binary_search(&item).is_ok()
    }

    /// Pairs in `(user, item)` order.
    pub fn pairs(&self) -> impl Iterator<Item = (UserId, ItemId)> + '_ {
        self.histories
            .iter()
            .enumerate()
            .flat_map(|(u, h)| h.iter().map(move |&i| (u, i)))
    }

    /// External id for each dense user id.
    pub fn external_user_ids(&self) -> &[u64] {
        &self.external_users
    }

    pub fn external_item_ids(&self) -> &[u64] {
        &self.external_items
    }

    pub fn user_remap(&self) -> BTreeMap<u64, UserId> {
        self.external_users.iter().enumerate().map(|(d, &e)| (e, d)).collect()
    }

    pub fn item_remap(&self) -> BTreeMap<u64, ItemId> {
        self.external_items.iter().enumerate().map(|(d, &e)| (e, d)).collect()
    }

    pub fn check_min_history(&self, min: usize) -> Result<()> {
        match self.histories.iter().enumerate().find(|(_, h)| h.len() < min) {
            Some((user, h)) => Err(Error::ShortHistory {
                user,
                len: h.len(),
                min,
            }),
            None => Ok(()),
        }
    }

    /// Canonical dense TSV, sorted by `(user, item)`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::with_capacity(self.len() * 8);
        for (u, i) in self.pairs() {
            out.push_str(&format!("{u}\t{i}\n"));
        }
        out
    }

    pub fn save_tsv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_tsv().as_bytes())
    }
}

/// Reads `user_id<TAB>item_id` lines. Users and items are remapped to dense
/// ids in ascending order of their external id.
pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<InteractionDataset> {
    let DatasetFormat::TsvPairs = format;
    let text = fs::read_to_string(path).context(|| format!("reading {}", path.display()))?;
    let raw = parse_pairs(path, &text)?;
    if raw.is_empty() {
        return Err(Error::EmptyDataset(path.display().to_string()));
    }
    let items: Vec<u64> = sorted_unique(raw.iter().map(|&(_, i)| i));
    build_remapped(raw, items)
}

/// Loads interactions together with the labels side file. The item universe
/// is taken from the labels file so that never-consumed items keep their id.
pub fn load_labeled(interactions: &Path, labels: &Path) -> Result<(InteractionDataset, Labeling)> {
    let text = fs::read_to_string(interactions).context(|| format!("reading {}", interactions.display()))?;
    let raw = parse_pairs(interactions, &text)?;
    if raw.is_empty() {
        return Err(Error::EmptyDataset(interactions.display().to_string()));
    }
    let label_rows = parse_label_rows(labels)?;
    let items: Vec<u64> = label_rows.keys().copied().collect();
    let dataset = build_remapped(raw, items)?;
    if dataset.num_items() != label_rows.len() {
        return Err(Error::config(format!(
            "{} references items missing from {}",
            interactions.display(),
            labels.display()
        )));
    }
    let labeling = Labeling::from_names(label_rows.into_values())?;
    Ok((dataset, labeling))
}

fn parse_pairs(path: &Path, text: &str) -> Result<Vec<(u64, u64)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let bad = |msg: &str| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            msg: format!("{msg}: {line:?}"),
        };
        let mut fields = line.split('\t');
        let (Some(u), Some(i), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(bad("expected user_id<TAB>item_id"));
        };
        let u = u.trim().parse::<u64>().map_err(|_| bad("invalid user id"))?;
        let i = i.trim().parse::<u64>().map_err(|_| bad("invalid item id"))?;
        out.push((u, i));
    }
    Ok(out)
}

fn sorted_unique(ids: impl Iterator<Item = u64>) -> Vec<u64> {
    let mut v: Vec<u64> = ids.collect();
    v.sort_unstable();
    v.dedup();
    v
}

fn build_remapped(raw: Vec<(u64, u64)>, items: Vec<u64>) -> Result<InteractionDataset> {
    let users = sorted_unique(raw.iter().map(|&(u, _)| u));
    let umap: BTreeMap<u64, usize> = users.iter().enumerate().map(|(d, &e)| (e, d)).collect();
    let imap: BTreeMap<u64, usize> = items.iter().enumerate().map(|(d, &e)| (e, d)).collect();
    let mut pairs = Vec::with_capacity(raw.len());
    for (u, i) in raw {
        let Some(&di) = imap.get(&i) else {
            return Err(Error::config(format!("item {i} has no label")));
        };
        pairs.push((umap[&u], di));
    }
    let mut d = InteractionDataset::from_pairs(users.len(), items.len(), pairs)?;
    d.external_users = users;
    d.external_items = items;
    Ok(d)
}

/// Total map from items to one of `N` named categories.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labeling {
    categories: Vec<String>,
    labels: Vec<CategoryId>,
}

impl Labeling {
    pub fn new(categories: Vec<String>, labels: Vec<CategoryId>) -> Result<Self> {
        if let Some(bad) = labels.iter().find(|&&c| c >= categories.len()) {
            return Err(Error::config(format!(
                "label {bad} outside {} categories",
                categories.len()
            )));
        }
        Ok(Self { categories, labels })
    }

    /// Categories are numbered by first appearance.
    pub fn from_names<S: AsRef<str>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let mut categories: Vec<String> = Vec::new();
        let mut labels = Vec::new();
        for name in names {
            let name = name.as_ref();
            let id = match categories.iter().position(|c| c == name) {
                Some(id) => id,
                None => {
                    categories.push(name.to_string());
                    categories.len() - 1
                }
            };
            labels.push(id);
        }
        Ok(Self { categories, labels })
    }

    pub fn num_items(&self) -> usize {
        self.labels.len()
    }

    pub fn num_categories(&self) -> usize {
        self.categories.len()
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn label(&self, item: ItemId) -> CategoryId {
        self.labels[item]
    }

    pub fn labels(&self) -> &[CategoryId] {
        &self.labels
    }

    pub fn category_name(&self, c: CategoryId) -> &str {
        &self.categories[c]
    }

    pub fn category_id(&self, name: &str) -> Result<CategoryId> {
        self.categories
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::UnknownCategory(name.to_string()))
    }

    /// `I_c`.
    pub fn items_in(&self, c: CategoryId) -> impl Iterator<Item = ItemId> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(move |(_, &l)| l == c)
            .map(|(i, _)| i)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (i, &c) in self.labels.iter().enumerate() {
            out.push_str(&format!("{i}\t{}\n", self.categories[c]));
        }
        out
    }

    pub fn save_tsv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_tsv().as_bytes())
    }

    pub fn load_tsv(path: &Path) -> Result<Self> {
        let rows = parse_label_rows(path)?;
        let expected: Vec<u64> = (0..rows.len() as u64).collect();
        if rows.keys().copied().ne(expected) {
            return Err(Error::config(format!(
                "{}: item ids must be dense 0..{}",
                path.display(),
                rows.len()
            )));
        }
        Self::from_names(rows.into_values())
    }
}

fn parse_label_rows(path: &Path) -> Result<BTreeMap<u64, String>> {
    let text = fs::read_to_string(path).context(|| format!("reading {}", path.display()))?;
    let mut rows = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let bad = |msg: &str| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            msg: format!("{msg}: {line:?}"),
        };
        let (id, name) = line
            .split_once('\t')
            .ok_or_else(|| bad("expected item_id<TAB>category"))?;
        let id = id.trim().parse::<u64>().map_err(|_| bad("invalid item id"))?;
        if name.is_empty() || name.contains('\t') {
            return Err(bad("invalid category name"));
        }
        if rows.insert(id, name.to_string()).is_some() {
            return Err(bad("item labelled twice"));
        }
    }
    Ok(rows)
}

/// Item count per category, in category order.
pub fn category_counts(_d: &InteractionDataset, l: &Labeling) -> Vec<(String, usize)> {
    let mut counts = vec![0usize; l.num_categories()];
    for &c in l.labels() {
        counts[c] += 1;
    }
    l.categories().iter().cloned().zip(counts).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stratum {
    NonRadicalized,
    SemiRadicalized,
    Radicalized,
}

impl Stratum {
    pub const ALL: [Stratum; 3] = [Stratum::NonRadicalized, Stratum::SemiRadicalized, Stratum::Radicalized];

    pub fn as_str(self) -> &'static str {
        match self {
            Stratum::NonRadicalized => "non_radicalized",
            Stratum::SemiRadicalized => "semi_radicalized",
            Stratum::Radicalized => "radicalized",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Stratum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stratum {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stratum::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown stratum {s:?}")))
    }
}

/// Harmful-fraction cut points. `[0, low]` is non-radicalized, `(low, high)`
/// semi-radicalized and `[high, 1]` radicalized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub low: f64,
    pub high: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { low: 0.2, high: 0.8 }
    }
}

impl Thresholds {
    pub fn classify(&self, fraction: f64) -> Stratum {
        if fraction <= self.low {
            Stratum::NonRadicalized
        } else if fraction >= self.high {
            Stratum::Radicalized
        } else {
            Stratum::SemiRadicalized
        }
    }

    pub fn contains(&self, stratum: Stratum, fraction: f64) -> bool {
        self.classify(fraction) == stratum
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PopulationAssignment {
    strata: Vec<Stratum>,
    harmful_fraction: Vec<f64>,
    thresholds: Thresholds,
}

impl PopulationAssignment {
    pub fn stratum(&self, user: UserId) -> Stratum {
        self.strata[user]
    }

    pub fn strata(&self) -> &[Stratum] {
        &self.strata
    }

    pub fn harmful_fraction(&self, user: UserId) -> f64 {
        self.harmful_fraction[user]
    }

    pub fn thresholds(&self) -> Thresholds {
        self.thresholds
    }

    pub fn counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for s in &self.strata {
            c[s.index()] += 1;
        }
        c
    }

    pub fn users_in(&self, stratum: Stratum) -> impl Iterator<Item = UserId> + '_ {
        self.strata
            .iter()
            .enumerate()
            .filter(move |(_, &s)| s == stratum)
            .map(|(u, _)| u)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("user_id,stratum,harmful_fraction\n");
        for (u, (s, f)) in self.strata.iter().zip(&self.harmful_fraction).enumerate() {
            out.push_str(&format!("{u},{s},{f}\n"));
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }

    pub fn load_csv(path: &Path, thresholds: Thresholds) -> Result<Self> {
        let text = fs::read_to_string(path).context(|| format!("reading {}", path.display()))?;
        let mut strata = Vec::new();
        let mut harmful_fraction = Vec::new();
        for (n, line) in text.lines().enumerate().skip(1) {
            if line.is_empty() {
                continue;
            }
            let bad = || Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                msg: format!("expected user_id,stratum,harmful_fraction: {line:?}"),
            };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 3 || f[0].parse::<usize>().ok() != Some(strata.len()) {
                return Err(bad());
            }
            strata.push(f[1].parse().map_err(|_| bad())?);
            harmful_fraction.push(f[2].parse().map_err(|_| bad())?);
        }
        Ok(Self {
            strata,
            harmful_fraction,
            thresholds,
        })
    }
}

/// Fraction of `history` labelled `harmful`.
pub fn harmful_fraction(history: &[ItemId], labeling: &Labeling, harmful: CategoryId) -> f64 {
    let h = history.iter().filter(|&&i| labeling.label(i) == harmful).count();
    h as f64 / history.len() as f64
}

/// Assigns every user to a stratum from the harmful share of `D_u`.
pub fn assign_population(
    d: &InteractionDataset,
    l: &Labeling,
    harmful: CategoryId,
    thresholds: Thresholds,
) -> Result<PopulationAssignment> {
    if harmful >= l.num_categories() {
        return Err(Error::UnknownCategory(harmful.to_string()));
    }
    d.check_min_history(1)?;
    let harmful_fraction: Vec<f64> = d.histories().iter().map(|h| harmful_fraction(h, l, harmful)).collect();
    let strata = harmful_fraction.iter().map(|&f| thresholds.classify(f)).collect();
    Ok(PopulationAssignment {
        strata,
        harmful_fraction,
        thresholds,
    })
}

/// Writes through a temporary sibling and renames into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir).context(|| format!("creating {}", dir.display()))?;
    }
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let mut f = fs::File::create(&tmp).context(|| format!("creating {}", tmp.display()))?;
    f.write_all(bytes).context(|| format!("writing {}", tmp.display()))?;
    f.sync_all().ok();
    drop(f);
    fs::rename(&tmp, path).context(|| format!("renaming into {}", path.display()))
}
