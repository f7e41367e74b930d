use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use driftsim::synthgen::{consumed_overlap, generate, sample_powerlaw};
use driftsim::{Stratum, SynthConfig};

/// Least-squares slope of log P(X > x) against log x over the sorted sample.
fn ccdf_slope(weights: &[f64]) -> f64 {
    let mut w = weights.to_vec();
    w.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let n = w.len() as f64;
    let pts: Vec<(f64, f64)> = w
        .iter()
        .enumerate()
        .map(|(r, x)| (x.ln(), ((r + 1) as f64 / n).ln()))
        .collect();
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[test]
fn alpha_two_has_unit_ccdf_slope() {
    for seed in 0..3 {
        let w: Vec<f64> = sample_powerlaw(2.0, 10_000, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let slope = ccdf_slope(&w);
        assert!((slope + 1.0).abs() <= 0.15, "seed {seed}: slope {slope}");
    }
}

#[test]
fn smaller_exponent_has_heavier_tail() {
    let spread = |alpha: f64, seed: u64| {
        let mut w: Vec<f64> = sample_powerlaw(alpha, 2000, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        w.sort_by(|a, b| a.partial_cmp(b).unwrap());
        w[w.len() - 1] / w[w.len() / 2]
    };
    for seed in 0..5 {
        assert!(spread(2.2, seed) > spread(5.0, seed), "seed {seed}");
    }
}

fn desk(seed: u64) -> SynthConfig {
    SynthConfig {
        num_users: 300,
        num_items: 500,
        proportions: [0.2, 0.6, 0.2],
        seed,
        ..SynthConfig::default()
    }
}

#[test]
fn semi_radicalized_users_bridge_the_extremes() {
    for seed in 0..3 {
        let out = generate::<f64>(&desk(seed)).unwrap();
        let users = |s: Stratum| out.population.users_in(s).collect::<Vec<_>>();
        let (non, semi, rad) = (
            users(Stratum::NonRadicalized),
            users(Stratum::SemiRadicalized),
            users(Stratum::Radicalized),
        );
        let extremes = consumed_overlap(&out.dataset, &non, &rad);
        assert!(consumed_overlap(&out.dataset, &non, &semi) > extremes, "seed {seed}");
        assert!(consumed_overlap(&out.dataset, &semi, &rad) > extremes, "seed {seed}");
    }
}

#[test]
fn generation_ignores_worker_count() {
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let out = pool.install(|| generate::<f64>(&desk(9)).unwrap());
        let dir = tempfile::tempdir().unwrap();
        out.save(dir.path()).unwrap();
        let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| {
                let p = e.unwrap().path();
                (
                    p.file_name().unwrap().to_string_lossy().into_owned(),
                    std::fs::read(&p).unwrap(),
                )
            })
            .collect();
        files.sort();
        files
    };
    let serial = run(1);
    assert_eq!(serial.len(), 5);
    assert_eq!(serial, run(4));
}

#[test]
fn every_history_meets_the_minimum() {
    let cfg = desk(4);
    let out = generate::<f64>(&cfg).unwrap();
    assert!(out.dataset.histories().iter().all(|h| h.len() >= cfg.min_history));
    let expected = cfg.stratum_counts();
    assert_eq!(out.population.counts(), expected);
}
