use std::path::Path;

use super::{Recommender, RecommenderKind, ScoreSession};
use crate::dataset::{InteractionDataset, ItemId, UserId};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Real;

/// Scores every item by its interaction count at fit time, for every user.
#[derive(Debug, Clone)]
pub struct PopularityModel<F> {
    counts: Vec<F>,
}

impl<F: Real> PopularityModel<F> {
    pub fn fit(train: &InteractionDataset) -> Self {
        let mut counts = vec![0usize; train.num_items()];
        for (_, i) in train.pairs() {
            counts[i] += 1;
        }
        Self::from_counts(counts)
    }

    pub fn from_counts(counts: Vec<usize>) -> Self {
        Self {
            counts: counts.into_iter().map(F::from_count).collect(),
        }
    }

    pub fn counts(&self) -> &[F] {
        &self.counts
    }

    pub(super) fn read_body<'a>(path: &Path, lines: &mut impl Iterator<Item = (usize, &'a str)>) -> Result<Self> {
        let m = Matrix::<F>::parse_lines(path, lines)?;
        if m.rows() != 1 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                msg: "popularity counts must be a single row".into(),
            });
        }
        Ok(Self {
            counts: m.row(0).to_vec(),
        })
    }
}

struct Fixed<'a, F>(&'a [F]);

impl<F> ScoreSession<F> for Fixed<'_, F> {
    fn observe(&mut self, _item: ItemId) {}

    fn raw_scores(&self) -> &[F] {
        self.0
    }
}

impl<F: Real> Recommender<F> for PopularityModel<F> {
    fn kind(&self) -> RecommenderKind {
        RecommenderKind::Popularity
    }

    fn num_items(&self) -> usize {
        self.counts.len()
    }

    fn session<'a>(&'a self, _user: UserId, _history: &[ItemId]) -> Box<dyn ScoreSession<F> + 'a> {
        Box::new(Fixed(&self.counts))
    }

    fn write_body(&self, out: &mut String) {
        out.push_str(&Matrix::from_vec(1, self.counts.len(), self.counts.clone()).to_text());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_interactions() {
        let d = InteractionDataset::from_pairs(2, 3, [(0, 1), (1, 1), (1, 2)]).unwrap();
        let m = PopularityModel::<f64>::fit(&d);
        assert_eq!(m.counts(), &[0.0, 2.0, 1.0]);
    }

    #[test]
    fn excludes_history_and_orders_by_count() {
        // a = 0, b = 1, c = 2 with counts 5, 3, 1
        let m = PopularityModel::<f64>::from_counts(vec![5, 3, 1]);
        assert_eq!(m.top_k(0, 2, &[0]).items, vec![1, 2]);
        let tie = PopularityModel::<f64>::from_counts(vec![1, 4, 4]);
        assert_eq!(tie.top_k(3, 1, &[]).items, vec![1]);
    }
}
