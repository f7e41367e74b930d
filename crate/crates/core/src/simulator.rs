//! The user-recommender interaction process.
//!
//! For each of `B` rounds the history is reverted to `D`; every user then
//! makes `T` picks. A pick goes to the catalog with probability `γ`
//! (uniformly with probability `η`, otherwise by organic preference) and to
//! the current top-k list otherwise (by recommender score with probability
//! `δ`, otherwise by organic preference restricted to the list). Picks are
//! appended to the working history, which feeds the next top-k query, and
//! consecutive picks within a round are counted in `S^u`.
//!
//! Users never share mutable state, so the engine runs them in parallel;
//! each `(user, round)` pair owns an RNG substream and results are
//! identical to a single-threaded run.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use log::warn;
use rand::Rng;
use rayon::prelude::*;

use crate::dataset::{write_atomic, InteractionDataset, ItemId, Labeling, UserId};
use crate::error::{Error, IoContext, Result};
use crate::graph::{build_graph, TransitionCounts, UserGraph};
use crate::organic::{preference_distribution, OrganicModel, ScoreDirection};
use crate::recommender::{list_scores, rank_unseen, RecList, Recommender};
use crate::rng::{domain, substream};
use crate::scalar::{Field, Real};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChoiceParams {
    /// Resistance: probability of picking from the catalog.
    pub gamma: f64,
    /// Randomness: probability that a catalog pick is uniform.
    pub eta: f64,
    /// Inertia: probability that a list pick follows recommender scores.
    pub delta: f64,
    /// `B`.
    pub rounds: usize,
    /// `T`.
    pub steps: usize,
    pub k: usize,
}

impl Default for ChoiceParams {
    fn default() -> Self {
        Self {
            gamma: 0.1,
            eta: 0.0,
            delta: 0.5,
            rounds: 50,
            steps: 100,
            k: 10,
        }
    }
}

impl ChoiceParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("gamma", self.gamma), ("eta", self.eta), ("delta", self.delta)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if self.rounds == 0 || self.steps == 0 || self.k == 0 {
            return Err(Error::config("B, T and k must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Branch {
    RandomCatalog,
    OrganicCatalog,
    ScoreList,
    OrganicList,
}

impl Branch {
    pub const ALL: [Branch; 4] = [
        Branch::RandomCatalog,
        Branch::OrganicCatalog,
        Branch::ScoreList,
        Branch::OrganicList,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Branch::RandomCatalog => "random_catalog",
            Branch::OrganicCatalog => "organic_catalog",
            Branch::ScoreList => "score_list",
            Branch::OrganicList => "organic_list",
        }
    }

    pub fn is_catalog(self) -> bool {
        matches!(self, Branch::RandomCatalog | Branch::OrganicCatalog)
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Branch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Branch::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown branch {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceRecord {
    pub user: UserId,
    pub round: usize,
    pub step: usize,
    pub branch: Branch,
    pub item: ItemId,
    /// FNV-1a over the exposed list, 0 when no list was computed.
    pub list_hash: u64,
}

#[derive(Debug, Clone, Default)]
pub struct SimOptions {
    pub record_trace: bool,
}

/// Everything one user produced across all rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct UserRun {
    pub user: UserId,
    pub counts: TransitionCounts,
    /// `Î^u`: union of picks over all rounds, ascending.
    pub picks: Vec<ItemId>,
    /// Indexed like [`Branch::ALL`].
    pub branch_counts: [u64; 4],
    /// Steps whose recommendation list came back empty.
    pub empty_lists: u64,
    pub short_lists: u64,
    pub trace: Vec<TraceRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOutput {
    pub params: ChoiceParams,
    pub seed: u64,
    pub users: Vec<UserRun>,
}

/// Per-(user, round) state a pick is drawn against.
pub struct ChoiceContext<'a, F> {
    /// `‖ρ_u − α̂_i^S‖` for every catalog item.
    pub distances: &'a [F],
    /// Items in `D̂_u`.
    pub seen: &'a [bool],
    pub direction: ScoreDirection,
}

fn bernoulli<R: Rng + ?Sized>(p: f64, rng: &mut R) -> bool {
    rng.random::<f64>() < p
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_index<F: Real, R: Rng + ?Sized>(probs: &[F], rng: &mut R) -> usize {
    let u = F::lit(rng.random::<f64>());
    let mut acc = F::zero();
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > F::zero()).unwrap_or(probs.len() - 1)
}

/// Draws one item and reports which branch produced it. The returned item
/// is never in `D̂_u`.
pub fn choose_item<F: Real, R: Rng + ?Sized>(
    ctx: &ChoiceContext<'_, F>,
    list: &RecList<F>,
    params: &ChoiceParams,
    rng: &mut R,
) -> Result<(ItemId, Branch)> {
    let to_catalog = bernoulli(params.gamma, rng);
    if to_catalog || list.is_empty() {
        if !to_catalog {
            warn!("empty recommendation list; falling back to the catalog");
        }
        let unseen: Vec<ItemId> = (0..ctx.seen.len()).filter(|&i| !ctx.seen[i]).collect();
        if unseen.is_empty() {
            return Err(Error::EmptyCandidates);
        }
        if bernoulli(params.eta, rng) {
            let i = unseen[rng.random_range(0..unseen.len())];
            return Ok((i, Branch::RandomCatalog));
        }
        let d: Vec<F> = unseen.iter().map(|&i| ctx.distances[i]).collect();
        let p = preference_distribution(&d, ctx.direction)?;
        return Ok((unseen[sample_index(&p, rng)], Branch::OrganicCatalog));
    }
    if bernoulli(params.delta, rng) {
        let p = list_scores(&list.scores);
        return Ok((list.items[sample_index(&p, rng)], Branch::ScoreList));
    }
    let d: Vec<F> = list.items.iter().map(|&i| ctx.distances[i]).collect();
    let p = preference_distribution(&d, ctx.direction)?;
    Ok((list.items[sample_index(&p, rng)], Branch::OrganicList))
}

fn list_hash(items: &[ItemId]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    items.iter().fold(OFFSET, |h, &i| {
        (i as u64)
            .to_le_bytes()
            .iter()
            .fold(h, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
    })
}

/// Runs the interaction process for every user. `model = None` runs without
/// a recommender, which is only meaningful with `γ = 1`.
pub fn run_simulation<F: Real>(
    d: &InteractionDataset,
    labeling: &Labeling,
    model: Option<&dyn Recommender<F>>,
    organic: &OrganicModel<F>,
    params: &ChoiceParams,
    seed: u64,
    opts: &SimOptions,
) -> Result<SimulationOutput> {
    params.validate()?;
    let n_items = d.num_items();
    if labeling.num_items() != n_items || organic.num_items() != n_items {
        return Err(Error::config(
            "dataset, labeling and item features disagree on the catalog size",
        ));
    }
    if organic.num_users() != d.num_users() {
        return Err(Error::config(
            "dataset and user features disagree on the number of users",
        ));
    }
    if let Some(m) = model {
        if m.num_items() != n_items {
            return Err(Error::config("recommender was fitted on a different catalog"));
        }
    }
    if model.is_none() && params.gamma < 1.0 {
        return Err(Error::config("a run without recommender needs gamma = 1"));
    }
    for u in 0..d.num_users() {
        let available = n_items - d.history(u).len();
        if params.steps > available {
            return Err(Error::InsufficientCatalog {
                user: u,
                steps: params.steps,
                available,
            });
        }
    }
    let estimates = organic.estimates_for_rounds(params.rounds);
    let direction = organic.config().direction;

    let users = (0..d.num_users())
        .into_par_iter()
        .map(|u| -> Result<UserRun> {
            let mut run = UserRun {
                user: u,
                counts: TransitionCounts::new(),
                picks: Vec::new(),
                branch_counts: [0; 4],
                empty_lists: 0,
                short_lists: 0,
                trace: Vec::new(),
            };
            let mut picked = vec![false; n_items];
            for (round, est) in estimates.iter().enumerate() {
                let mut rng = substream(seed, domain::SIMULATION, u as u64, round as u64);
                let distances = organic.distances(u, est);
                let mut seen = vec![false; n_items];
                d.history(u).iter().for_each(|&i| seen[i] = true);
                let mut session = model.map(|m| m.session(u, d.history(u)));
                let mut prev: Option<ItemId> = None;
                for step in 0..params.steps {
                    let list = match &session {
                        Some(s) => rank_unseen(s.raw_scores(), &seen, params.k),
                        None => RecList {
                            items: Vec::new(),
                            scores: Vec::new(),
                            short: false,
                        },
                    };
                    run.short_lists += u64::from(list.short);
                    let ctx = ChoiceContext {
                        distances: &distances,
                        seen: &seen,
                        direction,
                    };
                    let (item, branch) = choose_item(&ctx, &list, params, &mut rng)?;
                    if list.is_empty() && model.is_some() {
                        run.empty_lists += 1;
                    }
                    debug_assert!(!seen[item]);
                    seen[item] = true;
                    if let Some(s) = session.as_mut() {
                        s.observe(item);
                    }
                    if let Some(j) = prev {
                        run.counts.add(j, item);
                    }
                    picked[item] = true;
                    prev = Some(item);
                    run.branch_counts[branch as usize] += 1;
                    if opts.record_trace {
                        run.trace.push(TraceRecord {
                            user: u,
                            round,
                            step,
                            branch,
                            item,
                            list_hash: if model.is_some() { list_hash(&list.items) } else { 0 },
                        });
                    }
                }
            }
            run.picks = (0..n_items).filter(|&i| picked[i]).collect();
            Ok(run)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SimulationOutput {
        params: *params,
        seed,
        users,
    })
}

impl SimulationOutput {
    pub fn graphs<T: Field>(&self, labeling: &Labeling) -> Vec<UserGraph<T>> {
        self.users
            .iter()
            .map(|r| build_graph(&r.counts, &r.picks, labeling))
            .collect()
    }

    pub fn branch_totals(&self) -> [u64; 4] {
        let mut t = [0; 4];
        for r in &self.users {
            for (a, b) in t.iter_mut().zip(r.branch_counts) {
                *a += b;
            }
        }
        t
    }

    pub fn trace(&self) -> impl Iterator<Item = &TraceRecord> {
        self.users.iter().flat_map(|r| r.trace.iter())
    }

    /// Edge list `user_id,src_item,dst_item,prob,count`.
    pub fn graph_csv(&self, labeling: &Labeling) -> String {
        let mut out = String::from("user_id,src_item,dst_item,prob,count\n");
        for (r, g) in self.users.iter().zip(self.graphs::<f64>(labeling)) {
            for (a, b, p, c) in g.edges() {
                out.push_str(&format!("{},{a},{b},{p},{c}\n", r.user));
            }
        }
        out
    }

    /// `user_id,item_id` for every element of `Î^u`.
    pub fn picks_csv(&self) -> String {
        let mut out = String::from("user_id,item_id\n");
        for r in &self.users {
            for i in &r.picks {
                out.push_str(&format!("{},{i}\n", r.user));
            }
        }
        out
    }

    pub fn trace_csv(&self) -> String {
        let mut out = String::from("user_id,round,step,branch,item_id,list_hash\n");
        for t in self.trace() {
            out.push_str(&format!(
                "{},{},{},{},{},{:016x}\n",
                t.user, t.round, t.step, t.branch, t.item, t.list_hash
            ));
        }
        out
    }

    pub fn save(&self, dir: &Path, labeling: &Labeling, with_trace: bool) -> Result<()> {
        write_atomic(&dir.join(GRAPHS_FILE), self.graph_csv(labeling).as_bytes())?;
        write_atomic(&dir.join(PICKS_FILE), self.picks_csv().as_bytes())?;
        if with_trace {
            write_atomic(&dir.join(TRACE_FILE), self.trace_csv().as_bytes())?;
        }
        Ok(())
    }
}

pub const GRAPHS_FILE: &str = "graphs.csv";
pub const PICKS_FILE: &str = "picks.csv";
pub const TRACE_FILE: &str = "trace.csv";

/// Per-user counts and picks read back from [`SimulationOutput::save`]
/// files.
pub fn load_runs(dir: &Path, num_users: usize) -> Result<Vec<(TransitionCounts, Vec<ItemId>)>> {
    let mut runs = vec![(TransitionCounts::new(), Vec::new()); num_users];
    let graphs = dir.join(GRAPHS_FILE);
    let text = std::fs::read_to_string(&graphs).context(|| format!("reading {}", graphs.display()))?;
    for (n, line) in text.lines().enumerate().skip(1) {
        let bad = || Error::Parse {
            path: graphs.clone(),
            line: n + 1,
            msg: format!("expected user_id,src_item,dst_item,prob,count: {line:?}"),
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(bad());
        }
        let u: usize = f[0].parse().map_err(|_| bad())?;
        let a: usize = f[1].parse().map_err(|_| bad())?;
        let b: usize = f[2].parse().map_err(|_| bad())?;
        let c: u64 = f[4].parse().map_err(|_| bad())?;
        runs.get_mut(u).ok_or_else(bad)?.0.add_n(a, b, c);
    }
    let picks = dir.join(PICKS_FILE);
    let text = std::fs::read_to_string(&picks).context(|| format!("reading {}", picks.display()))?;
    for (n, line) in text.lines().enumerate().skip(1) {
        let bad = || Error::Parse {
            path: picks.clone(),
            line: n + 1,
            msg: format!("expected user_id,item_id: {line:?}"),
        };
        let (u, i) = line.split_once(',').ok_or_else(bad)?;
        let u: usize = u.parse().map_err(|_| bad())?;
        let i: usize = i.parse().map_err(|_| bad())?;
        runs.get_mut(u).ok_or_else(bad)?.1.push(i);
    }
    Ok(runs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::organic::OrganicConfig;
    use crate::recommender::PopularityModel;
    use rand::SeedableRng;

    fn setup(n_users: usize, n_items: usize, hist: usize) -> (InteractionDataset, Labeling, OrganicModel<f64>) {
        let d = InteractionDataset::from_histories(
            n_items,
            (0..n_users)
                .map(|u| (0..hist).map(|k| (u + k * 3) % n_items).collect())
                .collect(),
        )
        .unwrap();
        let l =
            Labeling::from_names((0..n_items).map(|i| if i < n_items / 2 { "neutral" } else { "harmful" })).unwrap();
        let rho = Matrix::from_rows(
            &(0..n_users)
                .map(|u| vec![(u % 3) as f64 / 2.0, 1.0 - (u % 3) as f64 / 2.0])
                .collect::<Vec<_>>(),
        );
        let alpha = Matrix::from_rows(
            &(0..n_items)
                .map(|i| vec![i as f64 / n_items as f64, 1.0 - i as f64 / n_items as f64])
                .collect::<Vec<_>>(),
        );
        let o = OrganicModel::new(rho, alpha, OrganicConfig::default()).unwrap();
        (d, l, o)
    }

    #[test]
    fn single_step_has_no_transition() {
        let (d, l, o) = setup(1, 10, 2);
        let p = ChoiceParams {
            rounds: 1,
            steps: 1,
            ..ChoiceParams::default()
        };
        let pop = PopularityModel::<f64>::fit(&d);
        let out = run_simulation(&d, &l, Some(&pop), &o, &p, 1, &SimOptions::default()).unwrap();
        assert_eq!(out.users[0].counts.total(), 0);
        assert_eq!(out.users[0].picks.len(), 1);
    }

    #[test]
    fn two_rounds_three_steps_count_four_transitions() {
        let (d, l, o) = setup(1, 10, 2);
        let p = ChoiceParams {
            rounds: 2,
            steps: 3,
            gamma: 0.5,
            eta: 0.3,
            ..ChoiceParams::default()
        };
        let pop = PopularityModel::<f64>::fit(&d);
        let out = run_simulation(&d, &l, Some(&pop), &o, &p, 9, &SimOptions::default()).unwrap();
        assert_eq!(out.users[0].counts.total(), 4);
    }

    #[test]
    fn too_many_steps_refuse_to_start() {
        let (d, l, o) = setup(2, 7, 3);
        let p = ChoiceParams {
            rounds: 1,
            steps: 5,
            ..ChoiceParams::default()
        };
        let pop = PopularityModel::<f64>::fit(&d);
        assert!(matches!(
            run_simulation(&d, &l, Some(&pop), &o, &p, 1, &SimOptions::default()),
            Err(Error::InsufficientCatalog { available: 4, .. })
        ));
    }

    #[test]
    fn catalog_endpoint_is_uniform_over_unseen() {
        let (_, _, o) = setup(1, 6, 0);
        let distances = o.distances(0, o.alpha_hat_s());
        let seen = [true, false, false, true, false, false];
        let ctx = ChoiceContext {
            distances: &distances,
            seen: &seen,
            direction: ScoreDirection::Affinity,
        };
        let p = ChoiceParams {
            gamma: 1.0,
            eta: 1.0,
            ..ChoiceParams::default()
        };
        let empty = RecList {
            items: vec![],
            scores: vec![],
            short: true,
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let mut hits = [0usize; 6];
        let n = 40_000;
        for _ in 0..n {
            let (i, b) = choose_item(&ctx, &empty, &p, &mut rng).unwrap();
            assert_eq!(b, Branch::RandomCatalog);
            hits[i] += 1;
        }
        assert_eq!(hits[0] + hits[3], 0);
        for i in [1, 2, 4, 5] {
            // 4 sigma around n/4
            let sd = (n as f64 * 0.25 * 0.75).sqrt();
            assert!(((hits[i] as f64) - n as f64 / 4.0).abs() < 4.0 * sd);
        }
    }

    #[test]
    fn inertia_endpoint_follows_scores() {
        let distances = [0.0, 1.0, 2.0];
        let seen = [false; 3];
        let ctx = ChoiceContext {
            distances: &distances,
            seen: &seen,
            direction: ScoreDirection::Affinity,
        };
        let list = RecList {
            items: vec![2, 1],
            scores: vec![1.0, 0.0],
            short: false,
        };
        let p = ChoiceParams {
            gamma: 0.0,
            delta: 1.0,
            ..ChoiceParams::default()
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            assert_eq!(choose_item(&ctx, &list, &p, &mut rng).unwrap(), (2, Branch::ScoreList));
        }
        // delta = 0: organic preference restricted to the list favours item 1
        let p = ChoiceParams {
            gamma: 0.0,
            delta: 0.0,
            ..ChoiceParams::default()
        };
        for _ in 0..200 {
            let (i, b) = choose_item(&ctx, &list, &p, &mut rng).unwrap();
            assert_eq!(b, Branch::OrganicList);
            assert_eq!(i, 1);
        }
    }

    #[test]
    fn empty_list_falls_back_to_catalog() {
        let distances = [0.0, 1.0];
        let seen = [false, true];
        let ctx = ChoiceContext {
            distances: &distances,
            seen: &seen,
            direction: ScoreDirection::Affinity,
        };
        let empty = RecList {
            items: vec![],
            scores: vec![],
            short: true,
        };
        let p = ChoiceParams {
            gamma: 0.0,
            delta: 1.0,
            ..ChoiceParams::default()
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let (i, b) = choose_item(&ctx, &empty, &p, &mut rng).unwrap();
        assert_eq!(i, 0);
        assert!(b.is_catalog());
    }

    #[test]
    fn picks_are_fresh_within_rounds_and_avoid_history() {
        let (d, l, o) = setup(4, 40, 8);
        let pop = PopularityModel::<f64>::fit(&d);
        let p = ChoiceParams {
            rounds: 3,
            steps: 12,
            k: 3,
            gamma: 0.3,
            eta: 0.2,
            delta: 0.5,
        };
        let out = run_simulation(&d, &l, Some(&pop), &o, &p, 5, &SimOptions { record_trace: true }).unwrap();
        for u in 0..4 {
            for round in 0..3 {
                let picks: Vec<_> = out
                    .trace()
                    .filter(|t| t.user == u && t.round == round)
                    .map(|t| t.item)
                    .collect();
                assert_eq!(picks.len(), 12);
                let mut sorted = picks.clone();
                sorted.sort_unstable();
                sorted.dedup();
                assert_eq!(sorted.len(), 12);
                assert!(picks.iter().all(|&i| !d.contains(u, i)));
            }
        }
        assert_eq!(out.trace().count(), 4 * 3 * 12);
    }

    #[test]
    fn save_and_reload_runs() {
        let (d, l, o) = setup(3, 30, 5);
        let pop = PopularityModel::<f64>::fit(&d);
        let p = ChoiceParams {
            rounds: 2,
            steps: 5,
            ..ChoiceParams::default()
        };
        let out = run_simulation(&d, &l, Some(&pop), &o, &p, 2, &SimOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        out.save(dir.path(), &l, false).unwrap();
        let back = load_runs(dir.path(), 3).unwrap();
        for (r, (c, picks)) in out.users.iter().zip(back) {
            assert_eq!(r.counts, c);
            assert_eq!(r.picks, picks);
        }
    }
}
