use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use super::{read_field, Recommender, RecommenderKind, ScoreSession};
use crate::dataset::{InteractionDataset, ItemId, UserId};
use crate::error::{Error, Result};
use crate::linalg::{axpy, Matrix};
use crate::rng::{domain, substream};
use crate::scalar::Real;

/// Regularized low-rank factorization of the binary interaction matrix,
/// fitted by alternating least squares on
/// `‖R − X·Yᵀ‖² + λ(‖X‖² + ‖Y‖²)`.
///
/// Only the item factors `Y` are kept. A user vector is folded in from the
/// current history as `x = (YᵀY + λI)⁻¹ · Σ_{i∈H} y_i`, which is the exact
/// row update of the same objective.
#[derive(Debug, Clone)]
pub struct LatentFactorModel<F> {
    item_factors: Matrix<F>,
    regularization: f64,
    fold_in: Matrix<F>,
}

impl<F: Real> LatentFactorModel<F> {
    /// Returns the model and the objective after every sweep.
    pub fn fit(
        train: &InteractionDataset,
        rank: usize,
        regularization: f64,
        sweeps: usize,
        seed: u64,
    ) -> Result<(Self, Vec<f64>)> {
        if train.is_empty() {
            return Err(Error::EmptyDataset("latent-factor training set".into()));
        }
        if rank == 0 || regularization <= 0.0 {
            return Err(Error::config("latent-factor rank and regularization must be positive"));
        }
        let n_items = train.num_items();
        let lambda = F::lit(regularization);
        let mut rng = substream(seed, domain::LATENT_INIT, 0, 0);
        let scale = 0.1 / (rank as f64).sqrt();
        let mut y = Matrix::from_vec(
            n_items,
            rank,
            (0..n_items * rank)
                .map(|_| F::lit(scale * (rng.random::<f64>() - 0.5)))
                .collect(),
        );
        let mut objective = Vec::with_capacity(sweeps);
        let item_users = transpose_histories(train);
        for _ in 0..sweeps {
            let x = ls_update(train.histories(), &y, lambda)?;
            y = ls_update(&item_users, &x, lambda)?;
            objective.push(objective_value(train, &x, &y, regularization));
        }
        Ok((Self::from_item_factors(y, regularization)?, objective))
    }

    pub fn from_item_factors(item_factors: Matrix<F>, regularization: f64) -> Result<Self> {
        let mut a = item_factors.gram();
        for k in 0..a.rows() {
            a[(k, k)] += F::lit(regularization);
        }
        let fold_in = a.inverse_spd()?;
        Ok(Self {
            item_factors,
            regularization,
            fold_in,
        })
    }

    pub fn item_factors(&self) -> &Matrix<F> {
        &self.item_factors
    }

    pub fn rank(&self) -> usize {
        self.item_factors.cols()
    }

    /// User vector folded in from `history`.
    pub fn fold_in(&self, history: &[ItemId]) -> Vec<F> {
        let mut sum = vec![F::zero(); self.rank()];
        for &i in history {
            axpy(F::one(), self.item_factors.row(i), &mut sum);
        }
        self.fold_in.mul_vec(&sum)
    }

    pub(super) fn read_body<'a>(path: &Path, lines: &mut impl Iterator<Item = (usize, &'a str)>) -> Result<Self> {
        let regularization: f64 = read_field(path, lines, "regularization")?;
        let y = Matrix::parse_lines(path, lines)?;
        Self::from_item_factors(y, regularization)
    }
}

fn transpose_histories(d: &InteractionDataset) -> Vec<Vec<usize>> {
    let mut cols = vec![Vec::new(); d.num_items()];
    for (u, i) in d.pairs() {
        cols[i].push(u);
    }
    cols
}

/// Row-wise ridge solution `rows · other (otherᵀother + λI)⁻¹` for a binary
/// left-hand side given as index lists.
fn ls_update<F: Real>(rows: &[Vec<usize>], other: &Matrix<F>, lambda: F) -> Result<Matrix<F>> {
    let rank = other.cols();
    let mut a = other.gram();
    for k in 0..rank {
        a[(k, k)] += lambda;
    }
    let inv = a.inverse_spd()?;
    let mut out = Matrix::zeros(rows.len(), rank);
    let mut sum = vec![F::zero(); rank];
    for (r, idx) in rows.iter().enumerate() {
        sum.iter_mut().for_each(|s| *s = F::zero());
        for &j in idx {
            axpy(F::one(), other.row(j), &mut sum);
        }
        out.row_mut(r).copy_from_slice(&inv.mul_vec(&sum));
    }
    Ok(out)
}

fn objective_value<F: Real>(d: &InteractionDataset, x: &Matrix<F>, y: &Matrix<F>, lambda: f64) -> f64 {
    let mut loss = 0.0;
    for u in 0..x.rows() {
        let xu = x.row(u);
        let hist = d.history(u);
        for i in 0..y.rows() {
            let pred = crate::linalg::dot(xu, y.row(i)).as_f64();
            let target = if hist.binary_search(&i).is_ok() { 1.0 } else { 0.0 };
            loss += (target - pred) * (target - pred);
        }
    }
    let norm = |m: &Matrix<F>| m.as_slice().iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>();
    loss + lambda * (norm(x) + norm(y))
}

struct FoldInSession<'a, F> {
    model: &'a LatentFactorModel<F>,
    factor_sum: Vec<F>,
    scores: Vec<F>,
}

impl<F: Real> FoldInSession<'_, F> {
    fn refresh(&mut self) {
        let user = self.model.fold_in.mul_vec(&self.factor_sum);
        self.scores = self.model.item_factors.mul_vec(&user);
    }
}

impl<F: Real> ScoreSession<F> for FoldInSession<'_, F> {
    fn observe(&mut self, item: ItemId) {
        axpy(F::one(), self.model.item_factors.row(item), &mut self.factor_sum);
        self.refresh();
    }

    fn raw_scores(&self) -> &[F] {
        &self.scores
    }
}

impl<F: Real> Recommender<F> for LatentFactorModel<F> {
    fn kind(&self) -> RecommenderKind {
        RecommenderKind::LatentFactor
    }

    fn num_items(&self) -> usize {
        self.item_factors.rows()
    }

    fn session<'a>(&'a self, _user: UserId, history: &[ItemId]) -> Box<dyn ScoreSession<F> + 'a> {
        let mut factor_sum = vec![F::zero(); self.rank()];
        for &i in history {
            axpy(F::one(), self.item_factors.row(i), &mut factor_sum);
        }
        let mut s = FoldInSession {
            model: self,
            factor_sum,
            scores: Vec::new(),
        };
        s.refresh();
        Box::new(s)
    }

    fn write_body(&self, out: &mut String) {
        let _ = writeln!(out, "regularization {}", self.regularization);
        out.push_str(&self.item_factors.to_text());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> InteractionDataset {
        InteractionDataset::from_histories(
            30,
            (0..40)
                .map(|u| (0..30).filter(|i| (i * 11 + u * 7) % 9 < 3).collect())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn rank_sets_factor_width_and_objective_never_increases() {
        let (m, obj) = LatentFactorModel::<f64>::fit(&toy(), 4, 0.1, 12, 3).unwrap();
        assert_eq!(m.item_factors().cols(), 4);
        assert_eq!(obj.len(), 12);
        for w in obj.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "objective rose: {w:?}");
        }
    }

    #[test]
    fn fold_in_leaves_item_factors_untouched() {
        let (m, _) = LatentFactorModel::<f64>::fit(&toy(), 4, 0.1, 5, 3).unwrap();
        let before = m.item_factors().clone();
        let mut s = m.session(0, &[1, 2]);
        let first = s.raw_scores().to_vec();
        s.observe(7);
        assert_ne!(first, s.raw_scores());
        assert_eq!(*m.item_factors(), before);
        // incremental session equals a fresh fold-in over the extended history
        let fresh = m.session(0, &[1, 2, 7]);
        for (a, b) in s.raw_scores().iter().zip(fresh.raw_scores()) {
            assert!((a - b).abs() < 1e-12);
        }
        let user = m.fold_in(&[1, 2, 7]);
        let direct = m.item_factors().mul_vec(&user);
        assert_eq!(direct, fresh.raw_scores());
    }

    #[test]
    fn same_history_same_list() {
        let (m, _) = LatentFactorModel::<f32>::fit(&toy(), 3, 0.5, 4, 9).unwrap();
        assert_eq!(m.top_k(1, 5, &[0, 3]), m.top_k(1, 5, &[0, 3]));
    }
}
