use fss_core::toywalk::{free_walk_profile, walk_exponent_fit, walk_simulate, WalkConfig, WalkResult};
use fss_core::Error;

#[test]
fn free_walk_follows_the_parabola() {
    let cfg = WalkConfig { n: 1024, trials: 100_000, seed: 5 };
    let at = [256, 512, 768];
    let profile = free_walk_profile(&cfg, &at).unwrap();
    let start = cfg.start() as f64;
    let n = cfg.n as f64;
    let l_star = cfg.l_star() as f64;
    for (&l, &(mean, sd)) in at.iter().zip(&profile) {
        let drift: f64 = (0..l).map(|i| (i as f64 - l_star) / n).sum();
        let tol = 3.0 * sd / (cfg.trials as f64).sqrt();
        assert!((mean - start - drift).abs() < tol, "l={l}: {} vs {drift}", mean - start);
        let parabola = (l as f64 - l_star).powi(2) / (2.0 * n) - n / 8.0;
        assert!((drift - parabola).abs() <= 0.5 + 1e-9);
        let var: f64 = (0..l).map(|i| 1.0 - ((i as f64 - l_star) / n).powi(2)).sum();
        assert!((sd - var.sqrt()).abs() < 0.02 * sd, "l={l}: sd {sd} vs {}", var.sqrt());
    }
}

#[test]
fn failure_probability_exceeds_half_and_falls_with_n() {
    let ns = [1024usize, 2048, 4096, 8192];
    let results: Vec<WalkResult> = ns
        .iter()
        .map(|&n| walk_simulate(&WalkConfig { n, trials: 40_000, seed: 3 }).unwrap())
        .collect();
    for r in &results {
        let p = r.p_hat();
        let se = (p * (1.0 - p) / r.trials as f64).sqrt();
        assert!(p - 0.5 > 3.0 * se, "n={} p={p}", r.n);
    }
    assert!(results.last().unwrap().p_hat() < results[0].p_hat());
    let fit = walk_exponent_fit(&results).unwrap();
    assert!(fit.slope < 0.0);
}

#[test]
fn offset_grows_like_two_thirds_power() {
    let small = walk_simulate(&WalkConfig { n: 1024, trials: 40_000, seed: 8 }).unwrap();
    let large = walk_simulate(&WalkConfig { n: 8192, trials: 40_000, seed: 8 }).unwrap();
    let ratio = large.median_lg_offset.unwrap() / small.median_lg_offset.unwrap();
    assert!((ratio - 4.0).abs() < 0.3 * 4.0, "ratio {ratio}");
}

#[test]
fn exponent_of_exact_power_law() {
    let trials = 1u64 << 50;
    let results: Vec<WalkResult> = (10..=16)
        .map(|b| {
            let n = 1usize << b;
            let p = 0.5 + 0.3 * (n as f64).powf(-1.0 / 6.0);
            WalkResult {
                n,
                trials,
                failures: (p * trials as f64).round() as u64,
                median_lg_offset: None,
                median_depth: None,
            }
        })
        .collect();
    let fit = walk_exponent_fit(&results).unwrap();
    assert!((fit.slope + 1.0 / 6.0).abs() < 1e-3, "{}", fit.slope);
    assert!(matches!(walk_exponent_fit(&results[..3]), Err(Error::Unresolved(_))));
}

#[test]
fn seeded_runs_repeat() {
    let cfg = WalkConfig { n: 512, trials: 5000, seed: 12 };
    assert_eq!(walk_simulate(&cfg).unwrap(), walk_simulate(&cfg).unwrap());
    let other = WalkConfig { seed: 13, ..cfg };
    assert_ne!(walk_simulate(&cfg).unwrap(), walk_simulate(&other).unwrap());
}
