//! Synthetic populations with Dirichlet latent features, power-law item
//! popularity and user engagement, and controlled proportions of
//! non-/semi-/radicalized users.
//!
//! The latent space is split in two blocks: the first half of the dimensions
//! carries neutral mass, the second half harmful mass. Items and users draw
//! their features from block-biased Dirichlet concentrations; semi-radicalized
//! users use a flat concentration and therefore overlap both poles.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;

use crate::dataset::{
    assign_population, harmful_fraction, InteractionDataset, ItemId, Labeling, PopulationAssignment, Stratum,
    Thresholds, DEFAULT_MIN_HISTORY,
};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::{domain, substream};
use crate::scalar::Real;

pub const NEUTRAL: &str = "neutral";
pub const HARMFUL: &str = "harmful";

/// Retries per user before stratum resampling gives up.
pub const MAX_STRATUM_RETRIES: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_users: usize,
    pub num_items: usize,
    pub latent_dim: usize,
    pub user_powerlaw_alpha: f64,
    pub item_powerlaw_alpha: f64,
    /// Non-, semi- and radicalized shares; must sum to one.
    pub proportions: [f64; 3],
    pub harmful_item_fraction: f64,
    pub min_history: usize,
    /// History length of a user with engagement 1 (engagement has mean 1).
    pub mean_history: f64,
    pub max_history: usize,
    /// Dirichlet concentration on the block a user or item leans towards.
    pub concentration_preferred: f64,
    /// Dirichlet concentration on the other block.
    pub concentration_off: f64,
    pub thresholds: Thresholds,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_users: 2000,
            num_items: 500,
            latent_dim: 16,
            user_powerlaw_alpha: 2.2,
            item_powerlaw_alpha: 2.0,
            proportions: [0.2, 0.6, 0.2],
            harmful_item_fraction: 0.5,
            min_history: DEFAULT_MIN_HISTORY,
            mean_history: 30.0,
            max_history: 100,
            concentration_preferred: 0.1,
            concentration_off: 0.01,
            thresholds: Thresholds::default(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.proportions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.proportions.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::config(format!(
                "proportions {:?} must be non-negative and sum to 1",
                self.proportions
            )));
        }
        if self.num_users == 0 || self.num_items == 0 || self.latent_dim < 2 {
            return Err(Error::config(
                "num_users, num_items must be positive and latent_dim >= 2",
            ));
        }
        if !(self.user_powerlaw_alpha > 1.0 && self.item_powerlaw_alpha > 1.0) {
            return Err(Error::config("power-law exponents must exceed 1"));
        }
        if !(0.0..=1.0).contains(&self.harmful_item_fraction) {
            return Err(Error::config("harmful_item_fraction must lie in [0, 1]"));
        }
        if self.min_history == 0 || self.min_history > self.num_items {
            return Err(Error::config(format!(
                "min_history {} infeasible for {} items",
                self.min_history, self.num_items
            )));
        }
        if self.max_history < self.min_history || self.mean_history <= 0.0 {
            return Err(Error::config("need 0 < mean_history and min_history <= max_history"));
        }
        if !(self.concentration_preferred > 0.0 && self.concentration_off > 0.0) {
            return Err(Error::config("Dirichlet concentrations must be positive"));
        }
        Ok(())
    }

    fn block_concentration(&self, harmful_block: bool) -> Vec<f64> {
        let half = self.latent_dim / 2;
        (0..self.latent_dim)
            .map(|d| {
                if (d >= half) == harmful_block {
                    self.concentration_preferred
                } else {
                    self.concentration_off
                }
            })
            .collect()
    }

    /// Dirichlet concentration for users of `stratum`.
    pub fn user_concentration(&self, stratum: Stratum) -> Vec<f64> {
        match stratum {
            Stratum::NonRadicalized => self.block_concentration(false),
            Stratum::Radicalized => self.block_concentration(true),
            Stratum::SemiRadicalized => vec![self.concentration_preferred; self.latent_dim],
        }
    }

    pub fn item_concentration(&self, harmful: bool) -> Vec<f64> {
        self.block_concentration(harmful)
    }

    /// Requested stratum sizes, rounded by largest remainder.
    pub fn stratum_counts(&self) -> [usize; 3] {
        largest_remainder(&self.proportions, self.num_users)
    }

    pub fn num_harmful_items(&self) -> usize {
        (self.num_items as f64 * self.harmful_item_fraction).round() as usize
    }
}

fn largest_remainder(shares: &[f64; 3], total: usize) -> [usize; 3] {
    let exact: Vec<f64> = shares.iter().map(|p| p * total as f64).collect();
    let mut counts = [0usize; 3];
    for (c, e) in counts.iter_mut().zip(&exact) {
        *c = e.floor() as usize;
    }
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut left = total.saturating_sub(counts.iter().sum());
    for &k in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[k] += 1;
        left -= 1;
    }
    counts
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput<F> {
    pub dataset: InteractionDataset,
    pub labeling: Labeling,
    pub population: PopulationAssignment,
    /// `ρ`, one simplex row per user.
    pub user_features: Matrix<F>,
    /// `α`, one simplex row per item.
    pub item_features: Matrix<F>,
    pub popularity: Vec<f64>,
    pub engagement: Vec<f64>,
}

/// File names written by [`SynthOutput::save`].
pub mod files {
    pub const INTERACTIONS: &str = "interactions.tsv";
    pub const LABELS: &str = "labels.tsv";
    pub const POPULATION: &str = "population.csv";
    pub const USER_FEATURES: &str = "user_features.txt";
    pub const ITEM_FEATURES: &str = "item_features.txt";
}

impl<F: Real> SynthOutput<F> {
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.dataset.save_tsv(&dir.join(files::INTERACTIONS))?;
        self.labeling.save_tsv(&dir.join(files::LABELS))?;
        self.population.save_csv(&dir.join(files::POPULATION))?;
        self.user_features.save_text(&dir.join(files::USER_FEATURES))?;
        self.item_features.save_text(&dir.join(files::ITEM_FEATURES))
    }
}

/// Pareto weights with density exponent `alpha` (`x_min = 1`), rescaled to
/// mean one.
pub fn sample_powerlaw<F: Real, R: Rng + ?Sized>(alpha: f64, n: usize, rng: &mut R) -> Result<Vec<F>> {
    if alpha.is_nan() || alpha <= 1.0 {
        return Err(Error::config(format!("power-law exponent {alpha} must exceed 1")));
    }
    let tail = 1.0 / (alpha - 1.0);
    let raw: Vec<f64> = (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            (1.0 - u).powf(-tail)
        })
        .collect();
    let mean = raw.iter().sum::<f64>() / n.max(1) as f64;
    Ok(raw.into_iter().map(|x| F::lit(x / mean)).collect())
}

/// Dirichlet draw computed in log space, so tiny concentrations never
/// produce NaN or an all-zero vector.
pub fn sample_dirichlet<R: Rng + ?Sized>(concentration: &[f64], rng: &mut R) -> Vec<f64> {
    let logs: Vec<f64> = concentration
        .iter()
        .map(|&a| {
            // Gamma(a) = Gamma(a + 1) * U^(1/a)
            let g: f64 = Gamma::new(a + 1.0, 1.0).expect("positive shape").sample(rng);
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            g.ln() + u.ln() / a
        })
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Weighted sampling of `n` distinct indices (Efraimidis-Spirakis keys).
/// Zero-weight entries are never chosen; returns `None` when fewer than `n`
/// entries have positive weight.
fn sample_without_replacement<R: Rng + ?Sized>(weights: &[f64], n: usize, rng: &mut R) -> Option<Vec<ItemId>> {
    let mut keyed: Vec<(f64, ItemId)> = weights
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            let key = if w > 0.0 { u.ln() / w } else { f64::NEG_INFINITY };
            (key, i)
        })
        .collect();
    if keyed.iter().filter(|k| k.0 > f64::NEG_INFINITY).count() < n {
        return None;
    }
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut picked: Vec<ItemId> = keyed[..n].iter().map(|k| k.1).collect();
    picked.sort_unstable();
    Some(picked)
}

struct UserDraw {
    features: Vec<f64>,
    history: Vec<ItemId>,
}

/// Generates a labelled synthetic dataset.
pub fn generate<F: Real>(cfg: &SynthConfig) -> Result<SynthOutput<F>> {
    cfg.validate()?;
    let n_items = cfg.num_items;
    let n_harmful = cfg.num_harmful_items();
    let n_neutral = n_items - n_harmful;

    // first block neutral, second block harmful
    let labeling = Labeling::new(
        vec![NEUTRAL.to_string(), HARMFUL.to_string()],
        (0..n_items).map(|i| usize::from(i >= n_neutral)).collect(),
    )?;
    let harmful = 1;

    let item_features: Vec<Vec<f64>> = (0..n_items)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(cfg.seed, domain::SYNTH_ITEMS, i as u64, 0);
            sample_dirichlet(&cfg.item_concentration(i >= n_neutral), &mut rng)
        })
        .collect();

    let popularity: Vec<f64> = sample_powerlaw(
        cfg.item_powerlaw_alpha,
        n_items,
        &mut substream(cfg.seed, domain::SYNTH_POPULARITY, 0, 0),
    )?;
    let engagement: Vec<f64> = sample_powerlaw(
        cfg.user_powerlaw_alpha,
        cfg.num_users,
        &mut substream(cfg.seed, domain::SYNTH_ENGAGEMENT, 0, 0),
    )?;

    let [n_non, n_semi, _] = cfg.stratum_counts();
    let target: Vec<Stratum> = (0..cfg.num_users)
        .map(|u| {
            if u < n_non {
                Stratum::NonRadicalized
            } else if u < n_non + n_semi {
                Stratum::SemiRadicalized
            } else {
                Stratum::Radicalized
            }
        })
        .collect();

    let draws: Vec<UserDraw> = (0..cfg.num_users)
        .into_par_iter()
        .map(|u| {
            let size = ((cfg.mean_history * engagement[u]).round() as usize)
                .clamp(cfg.min_history, cfg.max_history.min(n_items));
            draw_user(cfg, u, target[u], size, &item_features, &popularity, &labeling, harmful)
        })
        .collect::<Result<_>>()?;

    let dataset = InteractionDataset::from_histories(n_items, draws.iter().map(|d| d.history.clone()).collect())?;
    dataset.check_min_history(cfg.min_history)?;
    let population = assign_population(&dataset, &labeling, harmful, cfg.thresholds)?;
    if population.strata() != target.as_slice() {
        return Err(Error::config("realized strata differ from requested strata"));
    }

    let to_matrix = |rows: Vec<Vec<f64>>| {
        let rows: Vec<Vec<F>> = rows.into_iter().map(|r| r.into_iter().map(F::lit).collect()).collect();
        Matrix::from_rows(&rows)
    };
    Ok(SynthOutput {
        dataset,
        labeling,
        population,
        user_features: to_matrix(draws.into_iter().map(|d| d.features).collect()),
        item_features: to_matrix(item_features),
        popularity,
        engagement,
    })
}

#[allow(clippy::too_many_arguments)]
fn draw_user(
    cfg: &SynthConfig,
    user: usize,
    stratum: Stratum,
    size: usize,
    item_features: &[Vec<f64>],
    popularity: &[f64],
    labeling: &Labeling,
    harmful: usize,
) -> Result<UserDraw> {
    let mut rng = substream(cfg.seed, domain::SYNTH_USERS, user as u64, 0);
    let concentration = cfg.user_concentration(stratum);
    for _ in 0..=MAX_STRATUM_RETRIES {
        let features = sample_dirichlet(&concentration, &mut rng);
        let weights: Vec<f64> = item_features
            .iter()
            .zip(popularity)
            .map(|(a, &p)| a.iter().zip(&features).map(|(x, y)| x * y).sum::<f64>() * p)
            .collect();
        let Some(history) = sample_without_replacement(&weights, size, &mut rng) else {
            continue;
        };
        let f = harmful_fraction(&history, labeling, harmful);
        if cfg.thresholds.contains(stratum, f) {
            return Ok(UserDraw { features, history });
        }
    }
    Err(Error::StratumResampling {
        user,
        retries: MAX_STRATUM_RETRIES,
    })
}

/// Jaccard overlap between the item sets consumed by two user groups.
pub fn consumed_overlap(d: &InteractionDataset, a: &[usize], b: &[usize]) -> f64 {
    let set = |users: &[usize]| -> std::collections::BTreeSet<ItemId> {
        users.iter().flat_map(|&u| d.history(u).iter().copied()).collect()
    };
    let (sa, sb) = (set(a), set(b));
    let union = sa.union(&sb).count();
    if union == 0 {
        return 0.0;
    }
    sa.intersection(&sb).count() as f64 / union as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn small(seed: u64, proportions: [f64; 3]) -> SynthConfig {
        SynthConfig {
            num_users: 120,
            num_items: 200,
            proportions,
            seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn skewed_proportions_round_exactly() {
        let cfg = SynthConfig {
            proportions: [0.05, 0.90, 0.05],
            ..SynthConfig::default()
        };
        assert_eq!(cfg.stratum_counts(), [100, 1800, 100]);
        let thirds = SynthConfig {
            num_users: 300,
            proportions: [1.0 / 3.0; 3],
            ..SynthConfig::default()
        };
        assert_eq!(thirds.stratum_counts().iter().sum::<usize>(), 300);
    }

    #[test]
    fn half_of_500_items_are_harmful() {
        let cfg = SynthConfig {
            num_users: 40,
            ..SynthConfig::default()
        };
        let out = generate::<f64>(&cfg).unwrap();
        let counts = crate::dataset::category_counts(&out.dataset, &out.labeling);
        assert_eq!(counts, vec![(NEUTRAL.to_string(), 250), (HARMFUL.to_string(), 250)]);
    }

    #[test]
    fn all_non_radicalized_population() {
        let out = generate::<f64>(&small(3, [1.0, 0.0, 0.0])).unwrap();
        for u in 0..out.dataset.num_users() {
            assert!(out.population.harmful_fraction(u) <= 0.2);
        }
    }

    #[test]
    fn realized_strata_match_request_and_histories_are_long_enough() {
        let cfg = small(5, [0.2, 0.6, 0.2]);
        let out = generate::<f64>(&cfg).unwrap();
        assert_eq!(out.population.counts(), cfg.stratum_counts());
        out.dataset.check_min_history(cfg.min_history).unwrap();
        for row in out.user_features.iter_rows().chain(out.item_features.iter_rows()) {
            assert!(row.iter().all(|&x| x >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = small(11, [0.2, 0.6, 0.2]);
        let a = generate::<f64>(&cfg).unwrap();
        let b = generate::<f64>(&cfg).unwrap();
        assert_eq!(a, b);
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        a.save(dir_a.path()).unwrap();
        b.save(dir_b.path()).unwrap();
        for f in [
            files::INTERACTIONS,
            files::LABELS,
            files::POPULATION,
            files::USER_FEATURES,
            files::ITEM_FEATURES,
        ] {
            assert_eq!(
                std::fs::read(dir_a.path().join(f)).unwrap(),
                std::fs::read(dir_b.path().join(f)).unwrap()
            );
        }
    }

    #[test]
    fn infeasible_configs_are_rejected() {
        let cfg = SynthConfig {
            num_items: 10,
            ..SynthConfig::default()
        };
        assert!(matches!(generate::<f64>(&cfg), Err(Error::Config(_))));
        let cfg = SynthConfig {
            proportions: [0.5, 0.5, 0.5],
            ..SynthConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn powerlaw_rejects_non_integrable_exponent() {
        let mut rng = substream(1, 0, 0, 0);
        assert!(sample_powerlaw::<f64, _>(1.0, 10, &mut rng).is_err());
        assert!(sample_powerlaw::<f64, _>(0.5, 10, &mut rng).is_err());
    }

    #[test]
    fn powerlaw_single_weight_is_one() {
        let mut rng = substream(1, 0, 0, 0);
        let w = sample_powerlaw::<f64, _>(2.0, 1, &mut rng).unwrap();
        assert_eq!(w, vec![1.0]);
    }

    #[test]
    fn dirichlet_small_concentration_stays_on_simplex() {
        let mut rng = substream(2, 0, 0, 0);
        for _ in 0..200 {
            let v = sample_dirichlet(&[0.01; 16], &mut rng);
            assert!(v.iter().all(|x| x.is_finite() && *x >= 0.0));
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn weighted_sampling_skips_zero_weights() {
        let mut rng = substream(2, 0, 0, 0);
        let w = [0.0, 1.0, 0.0, 2.0, 3.0];
        assert_eq!(sample_without_replacement(&w, 3, &mut rng), Some(vec![1, 3, 4]));
        assert_eq!(sample_without_replacement(&w, 4, &mut rng), None);
    }
}
