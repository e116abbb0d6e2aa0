//! Exact conditional likelihood kernels.
//!
//! For a cluster with linear predictors `eta` and outcome sum `T` the
//! conditional likelihood normalizer is the elementary symmetric polynomial
//! `e_T(xi)` of the weights `xi_k = exp(eta_k)`. Replicating every individual
//! `R` times turns it into
//!
//! ```text
//! g(eta; R, T) = sum_{r in {0..R}^K, sum r = RT} prod_k C(R, r_k) exp(r_k eta_k),
//! ```
//!
//! the coefficient of `z^{R(K-T)}` in `prod_k (z + xi_k)^R`.
//!
//! [`log_perm_normalizer`] runs the elementary symmetric recursion in log
//! space. [`log_g`] tilts every predictor by the profile root `tau`, which
//! rewrites the sum as
//!
//! ```text
//! g = exp(-R T tau) * prod_k (1 + exp(eta_k + tau))^R * P(S = RT),
//! ```
//!
//! where `S` is a sum of independent `Binomial(R, expit(eta_k + tau))`
//! variables whose mean is exactly `RT`. The probability at the mean is of
//! order `R^{-1/2}`, so the convolution runs on plain probabilities, without
//! overflow. Gradients are conditional means of `r_k`, obtained from a
//! forward/backward pass over the same convolution.

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::math::{dot, log_add_exp, softplus};
use crate::model::{profile_root, Dataset};

/// Default cap on `R * K`, the size of the replicated state space.
pub const DEFAULT_MAX_STATES: usize = 1_000_000;

/// Log of a normalizer and its gradient with respect to the linear predictors.
#[derive(Debug, Clone, PartialEq)]
pub struct LogNormalizer {
    pub value: f64,
    /// `d value / d eta_k`, the conditional mean of `r_k`.
    pub grad_eta: Vec<f64>,
}

/// Log of `sum_{r in {0,1}^K, sum r = T} exp(r' eta)` and its gradient.
pub fn log_perm_normalizer(eta: &[f64], t: usize) -> Result<LogNormalizer> {
    let size = eta.len();
    if t > size {
        return Err(Error::InvalidInput(format!("outcome sum {t} exceeds cluster size {size}")));
    }
    if t == 0 {
        return Ok(LogNormalizer { value: 0.0, grad_eta: vec![0.0; size] });
    }
    // prefix[k][s] = log e_s(xi_1..xi_k), suffix[k][s] = log e_s(xi_{k+1}..xi_K), s <= t.
    let mut prefix = vec![vec![f64::NEG_INFINITY; t + 1]; size + 1];
    prefix[0][0] = 0.0;
    for k in 0..size {
        let (done, rest) = prefix.split_at_mut(k + 1);
        let (prev, next) = (&done[k], &mut rest[0]);
        next[0] = prev[0];
        for s in 1..=t {
            next[s] = log_add_exp(prev[s], eta[k] + prev[s - 1]);
        }
    }
    let mut suffix = vec![vec![f64::NEG_INFINITY; t + 1]; size + 1];
    suffix[size][0] = 0.0;
    for k in (0..size).rev() {
        let (head, tail) = suffix.split_at_mut(k + 1);
        let (next, prev) = (&mut head[k], &tail[0]);
        next[0] = prev[0];
        for s in 1..=t {
            next[s] = log_add_exp(prev[s], eta[k] + prev[s - 1]);
        }
    }
    let value = prefix[size][t];
    let grad_eta = (0..size)
        .map(|k| {
            // log e_{t-1} of all weights except xi_k
            let mut without = f64::NEG_INFINITY;
            for a in 0..t {
                without = log_add_exp(without, prefix[k][a] + suffix[k + 1][t - 1 - a]);
            }
            (eta[k] + without - value).exp()
        })
        .collect();
    Ok(LogNormalizer { value, grad_eta })
}

/// `log C(n, k)` through the log-gamma function.
pub fn ln_binomial(n: usize, k: usize) -> f64 {
    debug_assert!(k <= n);
    if k == 0 || k == n {
        return 0.0;
    }
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// Log of the replicated normalizer `g(eta; R, T)` and its gradient, with the
/// default state-space cap.
pub fn log_g(eta: &[f64], replications: usize, t: usize) -> Result<LogNormalizer> {
    log_g_capped(eta, replications, t, DEFAULT_MAX_STATES)
}

/// A truncated distribution over `offset..offset + mass.len()`.
struct Window {
    offset: usize,
    mass: Vec<f64>,
}

impl Window {
    fn at(&self, s: usize) -> f64 {
        s.checked_sub(self.offset).and_then(|i| self.mass.get(i)).copied().unwrap_or(0.0)
    }

    /// Convolution with `pmf`, keeping only the states in `lo..=hi`.
    fn convolve(&self, pmf: &[f64], lo: usize, hi: usize) -> Window {
        let mut mass = vec![0.0; hi + 1 - lo];
        for (i, &w) in self.mass.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let s = self.offset + i;
            let r_lo = lo.saturating_sub(s);
            let r_hi = (hi - s.min(hi)).min(pmf.len() - 1);
            if s > hi || r_lo > r_hi {
                continue;
            }
            for r in r_lo..=r_hi {
                mass[s + r - lo] += w * pmf[r];
            }
        }
        Window { offset: lo, mass }
    }
}

/// [`log_g`] with an explicit cap on `R * K`.
pub fn log_g_capped(eta: &[f64], replications: usize, t: usize, max_states: usize) -> Result<LogNormalizer> {
    let size = eta.len();
    if replications == 0 {
        return Err(Error::InvalidInput("replication count must be at least 1".into()));
    }
    if t > size {
        return Err(Error::InvalidInput(format!("outcome sum {t} exceeds cluster size {size}")));
    }
    let states = replications.saturating_mul(size);
    if states > max_states {
        return Err(Error::StateSpace { states, cap: max_states });
    }
    let rf = replications as f64;
    if t == 0 {
        return Ok(LogNormalizer { value: 0.0, grad_eta: vec![0.0; size] });
    }
    if t == size {
        return Ok(LogNormalizer { value: rf * eta.iter().sum::<f64>(), grad_eta: vec![rf; size] });
    }

    let tau = profile_root(eta, t)?;
    let ln_choose: Vec<f64> = (0..=replications).map(|r| ln_binomial(replications, r)).collect();
    let mut log_scale = -rf * t as f64 * tau;
    let pmfs: Vec<Vec<f64>> = eta
        .iter()
        .map(|&e| {
            let z = e + tau;
            let (ln_p, ln_q) = (-softplus(-z), -softplus(z));
            log_scale += rf * softplus(z);
            ln_choose
                .iter()
                .enumerate()
                .map(|(r, lc)| (lc + r as f64 * ln_p + (replications - r) as f64 * ln_q).exp())
                .collect()
        })
        .collect();

    let target = replications * t;
    // Reachable partial sums after the first k clusters that can still hit the target.
    let prefix_range = |k: usize| {
        let lo = target.saturating_sub(replications * (size - k));
        let hi = (replications * k).min(target);
        (lo, hi)
    };
    let suffix_range = |k: usize| {
        let lo = target.saturating_sub(replications * k);
        let hi = (replications * (size - k)).min(target);
        (lo, hi)
    };

    let mut forward = Vec::with_capacity(size + 1);
    forward.push(Window { offset: 0, mass: vec![1.0] });
    for (k, pmf) in pmfs.iter().enumerate() {
        let (lo, hi) = prefix_range(k + 1);
        let next = forward[k].convolve(pmf, lo, hi);
        forward.push(next);
    }
    let mut backward: Vec<Window> = (0..=size).map(|_| Window { offset: 0, mass: Vec::new() }).collect();
    backward[size] = Window { offset: 0, mass: vec![1.0] };
    for k in (0..size).rev() {
        let (lo, hi) = suffix_range(k);
        backward[k] = backward[k + 1].convolve(&pmfs[k], lo, hi);
    }

    let prob = forward[size].at(target);
    let value = log_scale + prob.ln();

    let grad_eta = (0..size)
        .map(|k| {
            let (before, after) = (&forward[k], &backward[k + 1]);
            let mut mean = 0.0;
            for (r, &w) in pmfs[k].iter().enumerate() {
                if w == 0.0 || r > target {
                    continue;
                }
                let rest = target - r;
                let joint: f64 = before
                    .mass
                    .iter()
                    .enumerate()
                    .filter_map(|(i, &f)| {
                        let s = before.offset + i;
                        (s <= rest).then(|| f * after.at(rest - s))
                    })
                    .sum();
                mean += r as f64 * w * joint;
            }
            mean / prob
        })
        .collect();
    Ok(LogNormalizer { value, grad_eta })
}

/// Value and gradient of a cluster-summed conditional objective.
#[derive(Debug, Clone)]
pub struct ConditionalEval {
    pub value: f64,
    pub score: Vec<f64>,
}

fn conditional_eval<F>(dataset: &Dataset, beta: &[f64], weight: f64, normalizer: F) -> Result<ConditionalEval>
where
    F: Fn(&[f64], usize) -> Result<LogNormalizer>,
{
    dataset.check_beta(beta)?;
    let p = dataset.n_covariates();
    let mut value = 0.0;
    let mut score = vec![0.0; p];
    for cluster in dataset.clusters() {
        let eta = cluster.linear_predictors(beta);
        let norm = normalizer(&eta, cluster.outcome_sum())?;
        for ((x, &y), &m) in cluster.rows().zip(cluster.outcomes()).zip(&norm.grad_eta) {
            let resid = weight * y as f64 - m;
            score.iter_mut().zip(x).for_each(|(g, v)| *g += resid * v);
        }
        value += weight * dot(&cluster.outcome_weighted_covariates(), beta) - norm.value;
    }
    let scale = weight * dataset.n_individuals() as f64;
    score.iter_mut().for_each(|g| *g /= scale);
    Ok(ConditionalEval { value: value / scale, score })
}

/// Average conditional log-likelihood and its gradient.
pub fn clr_eval(dataset: &Dataset, beta: &[f64]) -> Result<ConditionalEval> {
    conditional_eval(dataset, beta, 1.0, log_perm_normalizer)
}

pub fn clr_avg_loglik(dataset: &Dataset, beta: &[f64]) -> Result<f64> {
    Ok(clr_eval(dataset, beta)?.value)
}

pub fn clr_score(dataset: &Dataset, beta: &[f64]) -> Result<Vec<f64>> {
    Ok(clr_eval(dataset, beta)?.score)
}

/// Average conditional log-likelihood of the `R`-fold replicated data and its gradient.
pub fn clr_rep_eval(dataset: &Dataset, replications: usize, beta: &[f64]) -> Result<ConditionalEval> {
    clr_rep_eval_capped(dataset, replications, beta, DEFAULT_MAX_STATES)
}

pub fn clr_rep_eval_capped(
    dataset: &Dataset,
    replications: usize,
    beta: &[f64],
    max_states: usize,
) -> Result<ConditionalEval> {
    if replications == 0 {
        return Err(Error::InvalidInput("replication count must be at least 1".into()));
    }
    conditional_eval(dataset, beta, replications as f64, |eta, t| {
        log_g_capped(eta, replications, t, max_states)
    })
}

pub fn clr_rep_avg_loglik(dataset: &Dataset, replications: usize, beta: &[f64]) -> Result<f64> {
    Ok(clr_rep_eval(dataset, replications, beta)?.value)
}

pub fn clr_rep_score(dataset: &Dataset, replications: usize, beta: &[f64]) -> Result<Vec<f64>> {
    Ok(clr_rep_eval(dataset, replications, beta)?.score)
}
