use fss_core::asymptotics::{
    alpha, covariance_evolution, initial_state, mean_evolution, AlphaMode, TrajectoryStatus, DEFAULT_STEP,
};
use fss_core::decoder::{erase, Channel, Peeler};
use fss_core::ensemble::{critical_point, de_evolve, make_regular};
use fss_core::graph::{mix_seed, sample_graph};
use fss_core::scaling::REFERENCE_TABLE;

#[test]
fn fully_erased_start() {
    let e = make_regular::<f64>(3, 6).unwrap();
    for mode in [AlphaMode::Conditional, AlphaMode::Binomial] {
        let (z, _) = initial_state(&e, 1.0, mode).unwrap();
        assert!((z.v_total() - 1.0).abs() < 1e-12);
        assert!((z.r[5] - 3.0).abs() < 1e-12);
        assert!(z.r[..5].iter().all(|&r| r.abs() < 1e-12));
        assert!(z.s().abs() < 1e-12);
    }
}

#[test]
fn initial_degree_one_fraction_matches_census() {
    let e = make_regular::<f64>(3, 6).unwrap();
    let eps = 0.42944;
    let (z, _) = initial_state(&e, eps, AlphaMode::Binomial).unwrap();
    let formula = 0.5 * eps * 6.0 * (1.0 - eps).powi(5);
    assert!((z.s() - formula).abs() < 1e-12);

    let n = 100_000;
    let mut peeler = Peeler::new();
    let samples: Vec<f64> = (0..20u64)
        .map(|t| {
            let g = sample_graph(&e, n, mix_seed(11, t)).unwrap();
            let p = erase(n, Channel::Iid(eps), mix_seed(12, t)).unwrap();
            let out = peeler.run(&g, &p, mix_seed(13, t), true);
            out.trajectory.unwrap()[0].s as f64 / n as f64
        })
        .collect();
    let k = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / k;
    let sd = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt();
    assert!((mean - formula).abs() < 3.0 * sd / k.sqrt(), "{mean} vs {formula} (sd {sd})");
}

#[test]
fn binomial_mode_has_more_variance() {
    let e = make_regular::<f64>(3, 6).unwrap();
    for eps in [0.1, 0.3, 0.5, 0.7, 0.9] {
        let (_, c) = initial_state(&e, eps, AlphaMode::Conditional).unwrap();
        let (_, b) = initial_state(&e, eps, AlphaMode::Binomial).unwrap();
        assert!(b.trace() > c.trace(), "eps={eps}");
        assert!(c.min_eigenvalue() >= -1e-9);
    }
}

#[test]
fn mean_evolution_regimes() {
    let e = make_regular::<f64>(3, 6).unwrap();
    let below = mean_evolution(&e, 0.40, DEFAULT_STEP).unwrap();
    assert_eq!(below.status, TrajectoryStatus::Decoded);
    assert!(below.minimum.s > 0.0);

    let above = mean_evolution(&e, 0.45, DEFAULT_STEP).unwrap();
    assert_eq!(above.status, TrajectoryStatus::Stalled);
    let x = de_evolve(&e, 0.45, 1e-12, 1_000_000);
    let y = 1.0 - (1.0 - x).powi(5);
    let predicted = 0.45 * y.powi(3);
    assert!((above.residual_v() - predicted).abs() < 1e-3, "{} vs {predicted}", above.residual_v());

    let cp = critical_point(&e, 1e-12).unwrap();
    let at = mean_evolution(&e, cp.epsilon_star, DEFAULT_STEP).unwrap();
    assert!(at.minimum.s.abs() < 1e-6, "{}", at.minimum.s);
}

#[test]
fn edge_balance_along_trajectory() {
    for (l, k, eps) in [(3, 6, 0.41), (4, 6, 0.49), (3, 4, 0.6)] {
        let e = make_regular::<f64>(l, k).unwrap();
        let tr = mean_evolution(&e, eps, DEFAULT_STEP).unwrap();
        for s in &tr.states {
            assert!(s.edge_imbalance(&tr.var_degrees).abs() < 1e-9);
        }
    }
    let irregular = "3:0.5,4:0.5/8:1".parse().unwrap();
    let tr = mean_evolution(&irregular, 0.4, DEFAULT_STEP).unwrap();
    assert!(tr.states.iter().all(|s| s.edge_imbalance(&tr.var_degrees).abs() < 1e-9));
}

#[test]
fn covariance_at_threshold() {
    let e = make_regular::<f64>(3, 6).unwrap();
    let cp = critical_point(&e, 1e-12).unwrap();
    let (_, g0) = initial_state(&e, cp.epsilon_star, AlphaMode::Conditional).unwrap();
    assert!(g0.min_eigenvalue() >= -1e-9);
    let full = covariance_evolution(&e, cp.epsilon_star, 1e-4, AlphaMode::Conditional).unwrap();
    let half = covariance_evolution(&e, cp.epsilon_star, 5e-5, AlphaMode::Conditional).unwrap();
    let (a, b) = (full.gamma_star.s_variance(), half.gamma_star.s_variance());
    assert!(a > 0.0);
    assert!(((a - b) / b).abs() < 1e-4, "{a} vs {b}");
}

#[test]
fn alpha_mode_identity_for_reference_ensembles() {
    for row in REFERENCE_TABLE {
        let e = make_regular::<f64>(row.l, row.k).unwrap();
        let c = alpha(&e, AlphaMode::Conditional).unwrap();
        let b = alpha(&e, AlphaMode::Binomial).unwrap();
        let eps = c.epsilon_star;
        let gap = b.alpha.powi(2) - c.alpha.powi(2) - eps * (1.0 - eps);
        assert!(gap.abs() < 1e-3, "({},{}) gap {gap}", row.l, row.k);
        assert!(c.alpha > 0.0 && c.sigma_star > 0.0 && c.slope > 0.0);
    }
}

#[test]
fn mean_trajectory_matches_simulation() {
    let e = make_regular::<f64>(3, 6).unwrap();
    let (n, eps, trials) = (100_000usize, 0.41, 40u64);
    let ode = mean_evolution(&e, eps, DEFAULT_STEP).unwrap();
    let taus = [0.1, 0.2, 0.3];
    let mut sums = vec![[0.0f64; 6]; taus.len()];
    let mut peeler = Peeler::new();
    for t in 0..trials {
        let g = sample_graph(&e, n, mix_seed(21, t)).unwrap();
        let p = erase(n, Channel::Iid(eps), mix_seed(22, t)).unwrap();
        let tr = peeler.run(&g, &p, mix_seed(23, t), true).trajectory.unwrap();
        for (i, &tau) in taus.iter().enumerate() {
            let pt = tr[(tau * n as f64).round() as usize];
            for (j, x) in [pt.v, pt.s, pt.t].into_iter().enumerate() {
                let x = x as f64 / n as f64;
                sums[i][j] += x;
                sums[i][j + 3] += x * x;
            }
        }
    }
    let k = trials as f64;
    for (i, &tau) in taus.iter().enumerate() {
        let state = ode
            .states
            .iter()
            .min_by(|a, b| (a.tau - tau).abs().total_cmp(&(b.tau - tau).abs()))
            .unwrap();
        let expect = [state.v_total(), state.s(), state.t()];
        for j in 0..3 {
            let mean = sums[i][j] / k;
            let var = (sums[i][j + 3] / k - mean * mean) * k / (k - 1.0);
            let se = (var / k).sqrt();
            assert!(
                (mean - expect[j]).abs() < 4.0 * se,
                "tau={tau} coord {j}: {mean} vs {} (se {se})",
                expect[j]
            );
        }
    }
}

#[test]
fn single_precision_trajectory() {
    let e = make_regular::<f32>(3, 6).unwrap();
    let tr = mean_evolution(&e, 0.40f32, 1e-3).unwrap();
    assert_eq!(tr.status, TrajectoryStatus::Decoded);
    assert!(tr.minimum.s > 0.0);
}
