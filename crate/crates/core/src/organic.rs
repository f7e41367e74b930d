//! Organic preference model: users perceive item features through Gaussian
//! noise, shrink the noisy estimates towards their global mean, and prefer
//! items whose perceived features lie close to their own.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::dataset::{InteractionDataset, ItemId, Labeling, UserId};
use crate::error::{Error, Result};
use crate::linalg::{euclidean, Matrix};
use crate::rng::{domain, substream};
use crate::scalar::Real;
use crate::simulator::{self, ChoiceParams, SimOptions, SimulationOutput};

/// Smoothing mass added to every affinity so that no candidate is
/// unreachable.
pub const AFFINITY_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoreDirection {
    /// Nearest perceived item gets affinity one.
    #[default]
    Affinity,
    /// Min-max normalized distance without inversion: the farthest item
    /// scores highest. Kept for comparison only.
    RawDistance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CovarianceNorm {
    /// `Σ_item = αᵀα / |I|`, the empirical second moment.
    #[default]
    Empirical,
    /// `Σ_item = αᵀα`, unnormalized.
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PerceptionMode {
    /// One noisy estimate per simulation run.
    #[default]
    PerRun,
    /// A fresh estimate for every round.
    PerRound,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrganicConfig {
    pub xi: f64,
    /// Factor applied to `Σ_item`.
    pub noise_scale: f64,
    pub covariance: CovarianceNorm,
    pub direction: ScoreDirection,
    pub perception: PerceptionMode,
    pub seed: u64,
}

impl Default for OrganicConfig {
    fn default() -> Self {
        Self {
            xi: 0.4,
            noise_scale: 0.5,
            covariance: CovarianceNorm::Empirical,
            direction: ScoreDirection::Affinity,
            perception: PerceptionMode::PerRun,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OrganicModel<F> {
    rho: Matrix<F>,
    alpha: Matrix<F>,
    sigma: Matrix<F>,
    sigma_factor: Matrix<F>,
    cfg: OrganicConfig,
    alpha_hat_s: Arc<Matrix<F>>,
}

impl<F: Real> OrganicModel<F> {
    pub fn new(rho: Matrix<F>, alpha: Matrix<F>, cfg: OrganicConfig) -> Result<Self> {
        if !(0.0..=1.0).contains(&cfg.xi) {
            return Err(Error::config(format!("xi = {} outside [0, 1]", cfg.xi)));
        }
        if rho.cols() != alpha.cols() {
            return Err(Error::config("user and item features differ in dimension"));
        }
        if cfg.noise_scale < 0.0 {
            return Err(Error::config("noise_scale must be non-negative"));
        }
        let sigma = noise_covariance(&alpha, cfg.noise_scale, cfg.covariance);
        let sigma_factor = sigma.cholesky_psd()?;
        let mut rng = substream(cfg.seed, domain::PERCEPTION, 0, 0);
        let alpha_hat_s = Arc::new(perceive_with_factor(&alpha, &sigma_factor, F::lit(cfg.xi), &mut rng));
        Ok(Self {
            rho,
            alpha,
            sigma,
            sigma_factor,
            cfg,
            alpha_hat_s,
        })
    }

    pub fn rho(&self) -> &Matrix<F> {
        &self.rho
    }

    pub fn alpha(&self) -> &Matrix<F> {
        &self.alpha
    }

    pub fn sigma(&self) -> &Matrix<F> {
        &self.sigma
    }

    pub fn config(&self) -> &OrganicConfig {
        &self.cfg
    }

    pub fn num_users(&self) -> usize {
        self.rho.rows()
    }

    pub fn num_items(&self) -> usize {
        self.alpha.rows()
    }

    /// Cached per-run estimate `α̂^S`.
    pub fn alpha_hat_s(&self) -> &Matrix<F> {
        &self.alpha_hat_s
    }

    /// Estimates in effect for each of `rounds` rounds.
    pub fn estimates_for_rounds(&self, rounds: usize) -> Vec<Arc<Matrix<F>>> {
        match self.cfg.perception {
            PerceptionMode::PerRun => vec![Arc::clone(&self.alpha_hat_s); rounds],
            PerceptionMode::PerRound => (0..rounds)
                .map(|b| {
                    let mut rng = substream(self.cfg.seed, domain::PERCEPTION, b as u64 + 1, 0);
                    Arc::new(perceive_with_factor(
                        &self.alpha,
                        &self.sigma_factor,
                        F::lit(self.cfg.xi),
                        &mut rng,
                    ))
                })
                .collect(),
        }
    }

    /// `‖ρ_u − α̂_i^S‖` for every item.
    pub fn distances(&self, user: UserId, estimates: &Matrix<F>) -> Vec<F> {
        let rho = self.rho.row(user);
        estimates.iter_rows().map(|a| euclidean(rho, a)).collect()
    }

    /// Organic pick distribution over `candidates` using the cached
    /// estimate.
    pub fn organic_scores(&self, user: UserId, candidates: &[ItemId]) -> Result<Vec<F>> {
        let rho = self.rho.row(user);
        let d: Vec<F> = candidates
            .iter()
            .map(|&i| euclidean(rho, self.alpha_hat_s.row(i)))
            .collect();
        preference_distribution(&d, self.cfg.direction)
    }
}

/// `scale · Σ_item` for the chosen normalization.
pub fn noise_covariance<F: Real>(alpha: &Matrix<F>, scale: f64, norm: CovarianceNorm) -> Matrix<F> {
    let mut sigma = alpha.gram();
    let divisor = match norm {
        CovarianceNorm::Empirical => alpha.rows().max(1) as f64,
        CovarianceNorm::Raw => 1.0,
    };
    sigma.scale(F::lit(scale / divisor));
    sigma
}

/// Samples `α̂_i ~ Normal(α_i, Σ)` once per item and shrinks each towards the
/// mean estimate: `α̂_i^S = ξ·α̂_i + (1 − ξ)·mean_j α̂_j`.
pub fn perceive_items<F: Real, R: Rng + ?Sized>(
    alpha: &Matrix<F>,
    sigma: &Matrix<F>,
    xi: F,
    rng: &mut R,
) -> Result<Matrix<F>> {
    if xi < F::zero() || xi > F::one() {
        return Err(Error::config("xi outside [0, 1]"));
    }
    let l = sigma.cholesky_psd()?;
    Ok(perceive_with_factor(alpha, &l, xi, rng))
}

fn perceive_with_factor<F: Real, R: Rng + ?Sized>(
    alpha: &Matrix<F>,
    factor: &Matrix<F>,
    xi: F,
    rng: &mut R,
) -> Matrix<F> {
    let (n, dim) = (alpha.rows(), alpha.cols());
    let mut noisy = alpha.clone();
    let mut z = vec![F::zero(); dim];
    for i in 0..n {
        for zk in z.iter_mut() {
            *zk = F::lit(rng.sample::<f64, _>(StandardNormal));
        }
        let row = noisy.row_mut(i);
        for (r, x) in row.iter_mut().enumerate() {
            for (k, &zk) in z.iter().enumerate().take(r + 1) {
                *x += factor[(r, k)] * zk;
            }
        }
    }
    let mut mean = vec![F::zero(); dim];
    for row in noisy.iter_rows() {
        for (m, &x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    let inv_n = F::one() / F::from_count(n.max(1));
    mean.iter_mut().for_each(|m| *m *= inv_n);
    for i in 0..n {
        for (x, &m) in noisy.row_mut(i).iter_mut().zip(&mean) {
            *x = xi * *x + (F::one() - xi) * m;
        }
    }
    noisy
}

/// Turns candidate distances into a pick distribution. Affinities are
/// min-max normalized over the candidate set, smoothed by
/// [`AFFINITY_EPSILON`] and normalized to sum to one.
pub fn preference_distribution<F: Real>(distances: &[F], direction: ScoreDirection) -> Result<Vec<F>> {
    if distances.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let (lo, hi) = distances
        .iter()
        .fold((F::infinity(), F::neg_infinity()), |(lo, hi), &d| {
            (lo.min(d), hi.max(d))
        });
    let span = hi - lo;
    if span.is_nan() || span <= F::zero() {
        let u = F::one() / F::from_count(distances.len());
        return Ok(vec![u; distances.len()]);
    }
    let eps = F::lit(AFFINITY_EPSILON);
    let mut p: Vec<F> = distances
        .iter()
        .map(|&d| {
            let a = match direction {
                ScoreDirection::Affinity => (hi - d) / span,
                ScoreDirection::RawDistance => (d - lo) / span,
            };
            a + eps
        })
        .collect();
    let total: F = p.iter().copied().sum();
    p.iter_mut().for_each(|x| *x /= total);
    Ok(p)
}

/// Counterfactual run without a recommender: every pick samples the organic
/// distribution over the whole unseen catalog.
pub fn organic_simulation<F: Real>(
    d: &InteractionDataset,
    labeling: &Labeling,
    organic: &OrganicModel<F>,
    rounds: usize,
    steps: usize,
    seed: u64,
    opts: &SimOptions,
) -> Result<SimulationOutput> {
    let params = ChoiceParams {
        gamma: 1.0,
        eta: 0.0,
        delta: 0.0,
        rounds,
        steps,
        k: 1,
    };
    simulator::run_simulation::<F>(d, labeling, None, organic, &params, seed, opts)
}
