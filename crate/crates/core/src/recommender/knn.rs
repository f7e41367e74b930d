use std::fmt::Write as _;
use std::path::Path;

use super::{read_field, Recommender, RecommenderKind, ScoreSession};
use crate::dataset::{InteractionDataset, ItemId, UserId};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Real;

/// Item-based nearest neighbours over cosine similarity of the binary
/// interaction columns. A user's score for item `j` is the sum of
/// `sim(i, j)` over history items `i` that have `j` among their
/// `neighbors` most similar items.
#[derive(Debug, Clone)]
pub struct ItemKnnModel<F> {
    similarity: Matrix<F>,
    neighbors: usize,
    /// Per item: `(neighbour, similarity)` for the top `neighbors` items.
    neighborhoods: Vec<Vec<(ItemId, F)>>,
}

impl<F: Real> ItemKnnModel<F> {
    pub fn fit(train: &InteractionDataset, neighbors: usize) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyDataset("item-kNN training set".into()));
        }
        let n = train.num_items();
        let mut co = vec![0u32; n * n];
        let mut degree = vec![0u32; n];
        for h in train.histories() {
            for (a, &i) in h.iter().enumerate() {
                degree[i] += 1;
                for &j in &h[a + 1..] {
                    co[i * n + j] += 1;
                    co[j * n + i] += 1;
                }
            }
        }
        let mut similarity = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let c = co[i * n + j];
                if i != j && c > 0 {
                    let norm = (f64::from(degree[i]) * f64::from(degree[j])).sqrt();
                    similarity[(i, j)] = F::lit(f64::from(c) / norm);
                }
            }
        }
        Ok(Self::from_similarity(similarity, neighbors))
    }

    pub fn from_similarity(similarity: Matrix<F>, neighbors: usize) -> Self {
        let n = similarity.rows();
        let neighborhoods = (0..n)
            .map(|i| {
                let mut row: Vec<(ItemId, F)> = similarity
                    .row(i)
                    .iter()
                    .enumerate()
                    .filter(|&(j, &s)| j != i && s > F::zero())
                    .map(|(j, &s)| (j, s))
                    .collect();
                row.sort_by(|a, b| {
                    b.1.partial_cmp(&a.1)
                        .unwrap_or(std::cmp::Ordering::Equal)
                        .then(a.0.cmp(&b.0))
                });
                row.truncate(neighbors);
                row
            })
            .collect();
        Self {
            similarity,
            neighbors,
            neighborhoods,
        }
    }

    pub fn similarity(&self, i: ItemId, j: ItemId) -> F {
        self.similarity[(i, j)]
    }

    pub fn similarity_matrix(&self) -> &Matrix<F> {
        &self.similarity
    }

    pub fn neighbors(&self) -> usize {
        self.neighbors
    }

    pub(super) fn read_body<'a>(path: &Path, lines: &mut impl Iterator<Item = (usize, &'a str)>) -> Result<Self> {
        let neighbors: usize = read_field(path, lines, "neighbors")?;
        let similarity = Matrix::parse_lines(path, lines)?;
        Ok(Self::from_similarity(similarity, neighbors))
    }
}

struct KnnSession<'a, F> {
    model: &'a ItemKnnModel<F>,
    scores: Vec<F>,
}

impl<F: Real> ScoreSession<F> for KnnSession<'_, F> {
    fn observe(&mut self, item: ItemId) {
        for &(j, s) in &self.model.neighborhoods[item] {
            self.scores[j] += s;
        }
    }

    fn raw_scores(&self) -> &[F] {
        &self.scores
    }
}

impl<F: Real> Recommender<F> for ItemKnnModel<F> {
    fn kind(&self) -> RecommenderKind {
        RecommenderKind::ItemKnn
    }

    fn num_items(&self) -> usize {
        self.similarity.rows()
    }

    fn session<'a>(&'a self, _user: UserId, history: &[ItemId]) -> Box<dyn ScoreSession<F> + 'a> {
        let mut s = KnnSession {
            model: self,
            scores: vec![F::zero(); self.num_items()],
        };
        history.iter().for_each(|&i| s.observe(i));
        Box::new(s)
    }

    fn write_body(&self, out: &mut String) {
        let _ = writeln!(out, "neighbors {}", self.neighbors);
        out.push_str(&self.similarity.to_text());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_columns_have_unit_similarity() {
        // items 0 and 1 are consumed by exactly the same users
        let d = InteractionDataset::from_histories(3, vec![vec![0, 1], vec![0, 1, 2], vec![2]]).unwrap();
        let m = ItemKnnModel::<f64>::fit(&d, 10).unwrap();
        assert!((m.similarity(0, 1) - 1.0).abs() < 1e-15);
        assert_eq!(m.similarity(0, 0), 0.0);
        assert!(m.similarity_matrix().is_symmetric(0.0));
    }

    #[test]
    fn top_one_is_most_similar_unseen_item() {
        let d = InteractionDataset::from_histories(
            6,
            (0..20)
                .map(|u| (0..6).filter(|i| (u * 5 + i * 3) % 7 < 3).collect())
                .collect(),
        )
        .unwrap();
        let m = ItemKnnModel::<f64>::fit(&d, 6).unwrap();
        for i in 0..6 {
            // brute force over the similarity row, lowest id wins ties
            let mut best = None;
            for j in (0..6).filter(|&j| j != i) {
                let s = m.similarity(i, j);
                if best.is_none_or(|(_, bs)| s > bs) {
                    best = Some((j, s));
                }
            }
            let list = m.top_k(0, 1, &[i]);
            assert_eq!(list.items, vec![best.unwrap().0]);
        }
    }

    #[test]
    fn neighbourhood_truncation_limits_scores() {
        let d = InteractionDataset::from_histories(4, vec![vec![0, 1, 2, 3], vec![0, 1], vec![0, 2]]).unwrap();
        let m = ItemKnnModel::<f64>::fit(&d, 1).unwrap();
        let s = m.session(0, &[0]);
        assert_eq!(s.raw_scores().iter().filter(|&&x| x > 0.0).count(), 1);
    }

    #[test]
    fn empty_training_set_is_rejected() {
        let d = InteractionDataset::from_pairs(2, 3, []).unwrap();
        assert!(ItemKnnModel::<f64>::fit(&d, 5).is_err());
    }
}
