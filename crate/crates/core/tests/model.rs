mod common;

use clogit::estimators::{solve_mle, SolverConfig};
use clogit::math::expit;
use clogit::model::{
    olr_avg_loglik, olr_profile_score, profile_eval, profile_loglik, profile_root, profile_tau, screen_dataset,
    Cluster, Parameters,
};
use clogit::Error;
use common::*;
use proptest::prelude::*;

fn residual(eta: &[f64], t: usize, tau: f64) -> f64 {
    (eta.iter().map(|e| expit(e + tau)).sum::<f64>() - t as f64).abs()
}

#[test]
fn screening_counts_dropped_clusters() {
    let pair = |y: Vec<u8>| Cluster::new(vec![vec![0.3], vec![-0.2]], y).unwrap();
    let ds = screen_dataset(vec![pair(vec![0, 0]), pair(vec![1, 0]), pair(vec![1, 1])]).unwrap();
    assert_eq!((ds.n_clusters(), ds.n_individuals(), ds.dropped_concordant()), (1, 2, 2));

    let ds = screen_dataset(vec![pair(vec![0, 1]), pair(vec![1, 0])]).unwrap();
    assert_eq!(ds.dropped_concordant(), 0);

    let err = screen_dataset(vec![pair(vec![0, 0]), pair(vec![1, 1])]).unwrap_err();
    assert_eq!(err, Error::NoDiscordantClusters);
    assert_eq!(err.to_string(), "no discordant clusters; estimators undefined");
}

#[test]
fn profile_root_examples() {
    assert_eq!(profile_root(&[0.0, 0.0], 1).unwrap(), 0.0);
    let tau = profile_root(&[2f64.ln(), 0.0], 1).unwrap();
    assert!((tau + 0.5 * 2f64.ln()).abs() < 1e-12);
    let tau = profile_root(&[0.0; 3], 2).unwrap();
    assert!((tau - 2f64.ln()).abs() < 1e-12);
    assert!(matches!(profile_root(&[0.0, 1.0], 0), Err(Error::InfiniteRoot { .. })));
    assert!(matches!(profile_root(&[0.0, 1.0], 2), Err(Error::InfiniteRoot { .. })));
    assert!(profile_root(&[0.0, 1.0], 2).unwrap_err().to_string().starts_with("profile root is infinite"));
}

#[test]
fn olr_examples() {
    let mut r = rng(3);
    let ds = logistic_dataset(&mut r, 12, &[2, 3, 4], &[0.4, -0.7]);
    let params = Parameters { beta: vec![0.0, 0.0], cluster_effects: Some(vec![0.0; ds.n_clusters()]) };
    assert!((olr_avg_loglik(&ds, &params).unwrap() + 2f64.ln()).abs() < 1e-15);

    let ds = screen_dataset(vec![Cluster::new(vec![vec![1.0], vec![-1.0]], vec![1, 0]).unwrap()]).unwrap();
    let params = Parameters { beta: vec![1.0], cluster_effects: Some(vec![0.0]) };
    let e = std::f64::consts::E;
    let oracle = 0.5 * ((1.0 - (1.0 + e).ln()) - (1.0 + 1.0 / e).ln());
    assert!((olr_avg_loglik(&ds, &params).unwrap() - oracle).abs() < 1e-15);
    assert!((oracle + 0.313262).abs() < 1e-6);

    let wrong = Parameters { beta: vec![1.0], cluster_effects: Some(vec![0.0, 1.0]) };
    assert!(matches!(olr_avg_loglik(&ds, &wrong), Err(Error::LengthMismatch { .. })));
}

#[test]
fn symmetric_cluster_profile() {
    let ds = screen_dataset(vec![Cluster::new(vec![vec![0.7, -1.2], vec![0.7, -1.2]], vec![0, 1]).unwrap()]).unwrap();
    assert!((profile_loglik(&ds, &[0.0, 0.0]).unwrap() + 2f64.ln()).abs() < 1e-15);
    let score = olr_profile_score(&ds, &[0.0, 0.0]).unwrap();
    assert!(score.iter().all(|s| s.abs() < 1e-15), "{score:?}");
}

#[test]
fn profile_equals_olr_at_profiled_intercepts() {
    let mut r = rng(11);
    let ds = logistic_dataset(&mut r, 15, &[2, 3, 5], &[0.5, 0.8]);
    for _ in 0..10 {
        let beta = random_vec(&mut r, 2, 2.0);
        let eval = profile_eval(&ds, &beta).unwrap();
        let params = Parameters { beta: beta.clone(), cluster_effects: Some(eval.tau.clone()) };
        assert!((eval.value - olr_avg_loglik(&ds, &params).unwrap()).abs() < 1e-14);
        for (c, &tau) in ds.clusters().iter().zip(&eval.tau) {
            assert_eq!(profile_tau(c, &beta).unwrap(), tau);
        }
    }
}

#[test]
fn profile_score_matches_finite_differences() {
    let mut r = rng(5);
    for _ in 0..20 {
        let ds = logistic_dataset(&mut r, 10, &[2, 3, 4], &[0.5, -0.3, 1.0]);
        let beta = random_vec(&mut r, 3, 1.5);
        let fd = central_difference(|b| profile_loglik(&ds, b).unwrap(), &beta, 1e-5);
        let score = olr_profile_score(&ds, &beta).unwrap();
        assert!(rel_err(&score, &fd) <= 1e-6, "{score:?} vs {fd:?}");
    }
}

#[test]
fn mle_matches_grid_search_over_beta_and_intercepts() {
    let ds = matched_pairs();
    let fit = solve_mle(&ds, &SolverConfig::default()).unwrap();
    assert!(fit.grad_inf_norm <= 1e-8);
    // The three treated-case pairs are identical, so they share one intercept
    // on the grid; the lone control-case pair takes its exact optimum.
    let mut best = f64::NEG_INFINITY;
    let steps = 2000;
    for i in 0..=steps {
        let beta = 4.0 * i as f64 / steps as f64;
        let own = profile_tau(&ds.clusters()[3], &[beta]).unwrap();
        for j in 0..=steps {
            let b = -4.0 + 4.0 * j as f64 / steps as f64;
            let params = Parameters { beta: vec![beta], cluster_effects: Some(vec![b, b, b, own]) };
            best = best.max(olr_avg_loglik(&ds, &params).unwrap());
        }
    }
    assert!(best <= fit.objective + 1e-12);
    assert!(fit.objective - best < 1e-5, "{} vs grid {best}", fit.objective);
    assert!((fit.beta_hat[0] - 2.0 * 3f64.ln()).abs() < 1e-7);
}

fn small_cluster() -> impl Strategy<Value = (Vec<f64>, usize)> {
    (2usize..8).prop_flat_map(|k| (prop::collection::vec(-30.0f64..30.0, k), 1..k))
}

proptest! {
    #[test]
    fn root_residual_is_tiny((eta, t) in small_cluster()) {
        let tau = profile_root(&eta, t).unwrap();
        prop_assert!(residual(&eta, t, tau) <= 1e-12, "residual {}", residual(&eta, t, tau));
    }

    #[test]
    fn analytic_bracket_contains_root((eta, t) in small_cluster()) {
        let size = eta.len() as f64;
        let centre = (t as f64 / size / (1.0 - t as f64 / size)).ln();
        let spread = eta.iter().fold(0.0f64, |m, e| m.max(e.abs()));
        let f = |tau: f64| eta.iter().map(|e| expit(e + tau)).sum::<f64>() - t as f64;
        prop_assert!(f(centre - spread) <= 0.0 && f(centre + spread) >= 0.0);
        let tau = profile_root(&eta, t).unwrap();
        prop_assert!(tau >= centre - spread - 1e-9 && tau <= centre + spread + 1e-9);
    }

    #[test]
    fn profile_loglik_is_concave(seed in 0u64..10_000, lambda in 0.01f64..0.99) {
        let mut r = rng(seed);
        let ds = logistic_dataset(&mut r, 8, &[2, 3, 4], &[0.5, -0.5]);
        let b1 = random_vec(&mut r, 2, 3.0);
        let b2 = random_vec(&mut r, 2, 3.0);
        let mid: Vec<f64> = b1.iter().zip(&b2).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect();
        let l = |b: &[f64]| profile_loglik(&ds, b).unwrap();
        prop_assert!(l(&mid) >= lambda * l(&b1) + (1.0 - lambda) * l(&b2) - 1e-10);
    }

    #[test]
    fn replication_leaves_average_likelihoods_unchanged(seed in 0u64..10_000, reps in 2usize..6) {
        let mut r = rng(seed);
        let ds = logistic_dataset(&mut r, 6, &[2, 3], &[0.3, 0.9]);
        let beta = random_vec(&mut r, 2, 2.0);
        let b = random_vec(&mut r, ds.n_clusters(), 2.0);
        let big = ds.replicate(reps);
        let params = Parameters { beta: beta.clone(), cluster_effects: Some(b) };
        let (a, c) = (olr_avg_loglik(&ds, &params).unwrap(), olr_avg_loglik(&big, &params).unwrap());
        prop_assert!((a - c).abs() <= 1e-13 * a.abs());
        let (a, c) = (profile_loglik(&ds, &beta).unwrap(), profile_loglik(&big, &beta).unwrap());
        prop_assert!((a - c).abs() <= 1e-13 * a.abs());
    }
}
