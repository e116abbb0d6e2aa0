#![allow(dead_code)]

use clogit::model::{screen_dataset, Cluster, Dataset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Three pairs where the treated unit is the case, one where the control is.
pub fn matched_pairs() -> Dataset {
    let pair = |treated_case: bool| {
        let y = if treated_case { vec![1, 0] } else { vec![0, 1] };
        Cluster::new(vec![vec![1.0], vec![0.0]], y).unwrap()
    };
    screen_dataset(vec![pair(true), pair(true), pair(true), pair(false)]).unwrap()
}

/// Mirror image: two pairs each way.
pub fn mirrored_pairs() -> Dataset {
    let pair = |y: Vec<u8>| Cluster::new(vec![vec![1.0], vec![0.0]], y).unwrap();
    screen_dataset(vec![pair(vec![1, 0]), pair(vec![0, 1]), pair(vec![1, 0]), pair(vec![0, 1])]).unwrap()
}

/// `clusters` discordant clusters of logistic data with a per-cluster intercept.
/// Sizes are drawn from `sizes`.
pub fn logistic_dataset(rng: &mut impl Rng, clusters: usize, sizes: &[usize], beta: &[f64]) -> Dataset {
    let mut raw = Vec::with_capacity(clusters);
    while raw.len() < clusters {
        let size = sizes[rng.random_range(0..sizes.len())];
        let b: f64 = rng.random_range(-1.0..1.0);
        let x: Vec<Vec<f64>> =
            (0..size).map(|_| beta.iter().map(|_| rng.random_range(-1.5..1.5)).collect()).collect();
        let y: Vec<u8> = x
            .iter()
            .map(|row| {
                let eta: f64 = b + row.iter().zip(beta).map(|(a, c)| a * c).sum::<f64>();
                u8::from(rng.random::<f64>() < 1.0 / (1.0 + (-eta).exp()))
            })
            .collect();
        let cluster = Cluster::new(x, y).unwrap();
        if cluster.is_discordant() {
            raw.push(cluster);
        }
    }
    screen_dataset(raw).unwrap()
}

pub fn random_vec(rng: &mut impl Rng, n: usize, half_width: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-half_width..half_width)).collect()
}

pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut up = x.to_vec();
            let mut down = x.to_vec();
            up[i] += h;
            down[i] -= h;
            (f(&up) - f(&down)) / (2.0 * h)
        })
        .collect()
}

/// Inf-norm error relative to `|b|_inf`, floored at 1e-3 so a vanishing reference compares absolutely.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(1e-3f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

/// 1:`controls` treatment-control design, treatment indicator as the only covariate.
pub fn one_to_k_design(rng: &mut impl Rng, clusters: usize, controls: usize, beta: f64) -> Dataset {
    let mut raw = Vec::with_capacity(clusters);
    while raw.len() < clusters {
        let b: f64 = rng.random_range(-1.5..0.5);
        let x: Vec<Vec<f64>> = (0..=controls).map(|k| vec![if k == 0 { 1.0 } else { 0.0 }]).collect();
        let y: Vec<u8> = x.iter().map(|row| u8::from(rng.random::<f64>() < 1.0 / (1.0 + (-(b + beta * row[0])).exp()))).collect();
        let cluster = Cluster::new(x, y).unwrap();
        if cluster.is_discordant() {
            raw.push(cluster);
        }
    }
    screen_dataset(raw).unwrap()
}

/// Matched pairs with `p` normal covariates.
pub fn pair_dataset(rng: &mut impl Rng, clusters: usize, beta: &[f64]) -> Dataset {
    let mut raw = Vec::with_capacity(clusters);
    while raw.len() < clusters {
        let b: f64 = rng.random_range(-1.0..1.0);
        let x: Vec<Vec<f64>> = (0..2).map(|_| beta.iter().map(|_| rng.random_range(-1.5..1.5)).collect()).collect();
        let y: Vec<u8> = x
            .iter()
            .map(|row| {
                let eta: f64 = b + row.iter().zip(beta).map(|(a, c)| a * c).sum::<f64>();
                u8::from(rng.random::<f64>() < 1.0 / (1.0 + (-eta).exp()))
            })
            .collect();
        let cluster = Cluster::new(x, y).unwrap();
        if cluster.is_discordant() {
            raw.push(cluster);
        }
    }
    screen_dataset(raw).unwrap()
}
