//! Per-user transition counts and the probabilistic item graph built from
//! them.

use std::collections::BTreeMap;

use crate::dataset::{CategoryId, ItemId, Labeling};
use crate::error::{Error, Result};
use crate::scalar::Field;

/// Sparse `S^u`: how often the user moved from one item to the next.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TransitionCounts {
    counts: BTreeMap<(ItemId, ItemId), u64>,
}

impl TransitionCounts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, from: ItemId, to: ItemId) {
        *self.counts.entry((from, to)).or_insert(0) += 1;
    }

    pub fn add_n(&mut self, from: ItemId, to: ItemId, n: u64) {
        if n > 0 {
            *self.counts.entry((from, to)).or_insert(0) += n;
        }
    }

    pub fn get(&self, from: ItemId, to: ItemId) -> u64 {
        self.counts.get(&(from, to)).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// `((from, to), count)` in ascending `(from, to)` order.
    pub fn iter(&self) -> impl Iterator<Item = ((ItemId, ItemId), u64)> + '_ {
        self.counts.iter().map(|(&k, &v)| (k, v))
    }
}

/// `G^u = (Î^u, Ŝ^u)`: nodes are items, edges carry row-normalized
/// transition probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct UserGraph<T> {
    nodes: Vec<ItemId>,
    labels: Vec<CategoryId>,
    /// Per node: `(target node index, probability, count)`, ascending target.
    rows: Vec<Vec<(usize, T, u64)>>,
}

impl<T: Field> UserGraph<T> {
    /// Graph over explicit node indices with given probabilities. Rows may be
    /// empty (dangling). Counts are left at zero.
    pub fn from_probabilities(nodes: Vec<ItemId>, labels: Vec<CategoryId>, rows: Vec<Vec<(usize, T)>>) -> Result<Self> {
        if nodes.len() != labels.len() || nodes.len() != rows.len() {
            return Err(Error::config("nodes, labels and rows differ in length"));
        }
        let rows = rows
            .into_iter()
            .map(|r| {
                let mut r: Vec<(usize, T, u64)> = r.into_iter().map(|(j, p)| (j, p, 0)).collect();
                r.sort_by_key(|e| e.0);
                r
            })
            .collect::<Vec<_>>();
        if rows.iter().flatten().any(|e| e.0 >= nodes.len()) {
            return Err(Error::config("edge target outside node range"));
        }
        Ok(Self { nodes, labels, rows })
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// `Î^u`, ascending.
    pub fn nodes(&self) -> &[ItemId] {
        &self.nodes
    }

    pub fn label(&self, node: usize) -> CategoryId {
        self.labels[node]
    }

    pub fn labels(&self) -> &[CategoryId] {
        &self.labels
    }

    pub fn node_index(&self, item: ItemId) -> Option<usize> {
        self.nodes.binary_search(&item).ok()
    }

    pub fn row(&self, node: usize) -> &[(usize, T, u64)] {
        &self.rows[node]
    }

    pub fn is_dangling(&self, node: usize) -> bool {
        self.rows[node].is_empty()
    }

    pub fn dangling(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&n| self.is_dangling(n)).collect()
    }

    pub fn num_edges(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// Transition probability between two items, zero if absent.
    pub fn prob(&self, from: ItemId, to: ItemId) -> T {
        let (Some(a), Some(b)) = (self.node_index(from), self.node_index(to)) else {
            return T::zero();
        };
        self.rows[a]
            .iter()
            .find(|e| e.0 == b)
            .map_or(T::zero(), |e| e.1.clone())
    }

    /// Edge list rows `(src_item, dst_item, prob, count)`.
    pub fn edges(&self) -> impl Iterator<Item = (ItemId, ItemId, &T, u64)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(move |(a, row)| row.iter().map(move |(b, p, c)| (self.nodes[a], self.nodes[*b], p, *c)))
    }
}

/// Row-normalizes `counts`. Nodes are every item appearing in a count or
/// in `picks`; rows without outgoing counts are dangling.
pub fn build_graph<T: Field>(counts: &TransitionCounts, picks: &[ItemId], labeling: &Labeling) -> UserGraph<T> {
    let mut nodes: Vec<ItemId> = picks
        .iter()
        .copied()
        .chain(counts.iter().flat_map(|((a, b), _)| [a, b]))
        .collect();
    nodes.sort_unstable();
    nodes.dedup();
    let index = |item: ItemId| nodes.binary_search(&item).expect("node present");
    let mut raw: Vec<Vec<(usize, u64)>> = vec![Vec::new(); nodes.len()];
    for ((a, b), c) in counts.iter() {
        if c > 0 {
            raw[index(a)].push((index(b), c));
        }
    }
    let rows = raw
        .into_iter()
        .map(|row| {
            let total: u64 = row.iter().map(|e| e.1).sum();
            let denom = T::from_count(total);
            row.into_iter()
                .map(|(b, c)| (b, T::from_count(c) / denom.clone(), c))
                .collect()
        })
        .collect();
    let labels = nodes.iter().map(|&i| labeling.label(i)).collect();
    UserGraph { nodes, labels, rows }
}
