//! Data model and the ordinary-logistic profile likelihood.
//!
//! A [`Cluster`] is one matched set sharing a nuisance intercept. The ordinary
//! log-likelihood is profiled over every intercept: for fixed coefficients the
//! intercept of cluster `j` is the unique root of
//! `sum_k expit(x_k' beta + tau) = T_j`, computed by [`profile_root`].

use serde::Serialize;

use crate::error::{Error, Result};
use crate::math::{dot, expit, logit, softplus};

/// One matched set: `K` individuals with `P` covariates each and binary outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    id: String,
    n_covariates: usize,
    // row-major, K x P
    covariates: Vec<f64>,
    outcomes: Vec<u8>,
    outcome_sum: usize,
}

impl Cluster {
    pub fn new(covariates: Vec<Vec<f64>>, outcomes: Vec<u8>) -> Result<Self> {
        Self::with_id(String::new(), covariates, outcomes)
    }

    pub fn with_id(id: impl Into<String>, covariates: Vec<Vec<f64>>, outcomes: Vec<u8>) -> Result<Self> {
        let size = outcomes.len();
        if size == 0 {
            return Err(Error::InvalidInput("cluster has no individuals".into()));
        }
        if covariates.len() != size {
            return Err(Error::LengthMismatch { expected: size, got: covariates.len() });
        }
        let p = covariates[0].len();
        if p == 0 {
            return Err(Error::InvalidInput("cluster has no covariates".into()));
        }
        let mut flat = Vec::with_capacity(size * p);
        for row in &covariates {
            if row.len() != p {
                return Err(Error::LengthMismatch { expected: p, got: row.len() });
            }
            if let Some(bad) = row.iter().find(|x| !x.is_finite()) {
                return Err(Error::InvalidInput(format!("non-finite covariate {bad}")));
            }
            flat.extend_from_slice(row);
        }
        if let Some(bad) = outcomes.iter().find(|&&y| y > 1) {
            return Err(Error::InvalidInput(format!("outcome {bad} is not binary")));
        }
        let outcome_sum = outcomes.iter().map(|&y| y as usize).sum();
        Ok(Self { id: id.into(), n_covariates: p, covariates: flat, outcomes, outcome_sum })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// Number of individuals `K_j`.
    pub fn size(&self) -> usize {
        self.outcomes.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.n_covariates
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.covariates[k * self.n_covariates..(k + 1) * self.n_covariates]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.covariates.chunks_exact(self.n_covariates)
    }

    pub fn outcomes(&self) -> &[u8] {
        &self.outcomes
    }

    /// The sufficient statistic `T = sum_k Y_k`.
    pub fn outcome_sum(&self) -> usize {
        self.outcome_sum
    }

    /// Discordant clusters have `1 <= T <= K - 1`.
    pub fn is_discordant(&self) -> bool {
        self.outcome_sum >= 1 && self.outcome_sum < self.size()
    }

    /// Linear predictors `eta_k = x_k' beta`.
    pub fn linear_predictors(&self, beta: &[f64]) -> Vec<f64> {
        self.rows().map(|x| dot(x, beta)).collect()
    }

    /// `sum_k Y_k x_k`.
    pub fn outcome_weighted_covariates(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.n_covariates];
        for (x, &y) in self.rows().zip(&self.outcomes) {
            if y == 1 {
                acc.iter_mut().zip(x).for_each(|(a, v)| *a += v);
            }
        }
        acc
    }

    /// Every individual duplicated `r` times, copies adjacent.
    pub fn replicate(&self, r: usize) -> Cluster {
        let mut covariates = Vec::with_capacity(self.covariates.len() * r);
        let mut outcomes = Vec::with_capacity(self.outcomes.len() * r);
        for (x, &y) in self.rows().zip(&self.outcomes) {
            for _ in 0..r {
                covariates.extend_from_slice(x);
                outcomes.push(y);
            }
        }
        Cluster {
            id: self.id.clone(),
            n_covariates: self.n_covariates,
            covariates,
            outcomes,
            outcome_sum: self.outcome_sum * r,
        }
    }
}

/// Screened collection of discordant clusters.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    clusters: Vec<Cluster>,
    n_individuals: usize,
    dropped_concordant: usize,
}

impl Dataset {
    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    /// Number of retained clusters `J`.
    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    /// Total number of retained individuals `N = sum_j K_j`.
    pub fn n_individuals(&self) -> usize {
        self.n_individuals
    }

    pub fn n_covariates(&self) -> usize {
        self.clusters[0].n_covariates()
    }

    pub fn dropped_concordant(&self) -> usize {
        self.dropped_concordant
    }

    /// Every individual duplicated `r` times inside its own cluster.
    pub fn replicate(&self, r: usize) -> Dataset {
        assert!(r >= 1, "replication count must be positive");
        Dataset {
            clusters: self.clusters.iter().map(|c| c.replicate(r)).collect(),
            n_individuals: self.n_individuals * r,
            dropped_concordant: self.dropped_concordant,
        }
    }

    pub(crate) fn check_beta(&self, beta: &[f64]) -> Result<()> {
        if beta.len() != self.n_covariates() {
            return Err(Error::LengthMismatch { expected: self.n_covariates(), got: beta.len() });
        }
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidInput("non-finite coefficient".into()));
        }
        Ok(())
    }
}

/// Drops concordant clusters (all-0 or all-1 outcomes) and recomputes `J` and `N`.
pub fn screen_dataset(raw: Vec<Cluster>) -> Result<Dataset> {
    if let Some(first) = raw.first() {
        let p = first.n_covariates();
        if let Some(c) = raw.iter().find(|c| c.n_covariates() != p) {
            return Err(Error::LengthMismatch { expected: p, got: c.n_covariates() });
        }
    }
    let total = raw.len();
    let clusters: Vec<Cluster> = raw.into_iter().filter(Cluster::is_discordant).collect();
    if clusters.is_empty() {
        return Err(Error::NoDiscordantClusters);
    }
    let n_individuals = clusters.iter().map(Cluster::size).sum();
    Ok(Dataset { dropped_concordant: total - clusters.len(), clusters, n_individuals })
}

/// Coefficients and optional per-cluster intercepts.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub beta: Vec<f64>,
    pub cluster_effects: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "method", content = "replications")]
pub enum Method {
    #[serde(rename = "mle")]
    Mle,
    #[serde(rename = "cmle")]
    Cmle,
    #[serde(rename = "cmle-r")]
    CmleReplicated(usize),
}

impl Method {
    pub fn tag(&self) -> &'static str {
        match self {
            Method::Mle => "mle",
            Method::Cmle => "cmle",
            Method::CmleReplicated(_) => "cmle-r",
        }
    }

    pub fn replications(&self) -> Option<usize> {
        match self {
            Method::CmleReplicated(r) => Some(*r),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub beta_hat: Vec<f64>,
    /// Profile roots `tau_j(beta_hat)`; only for the ordinary MLE.
    pub tau: Option<Vec<f64>>,
    pub objective: f64,
    pub grad_inf_norm: f64,
    pub iterations: usize,
    pub method: Method,
    pub converged: bool,
    /// Objective value at the start of every iteration plus the final value.
    pub trace: Vec<f64>,
}

const BRACKET_WIDTH: f64 = 1e-10;
const ROOT_TOLERANCE: f64 = 1e-12;
const MAX_POLISH_STEPS: usize = 5;

/// Root `tau` of `sum_k expit(eta_k + tau) = t`.
///
/// The left side is strictly increasing, and `logit(t/K) -/+ max_k |eta_k|`
/// brackets the root. Bisection narrows the bracket to `1e-10`, then at most
/// five Newton steps polish the residual below `1e-12`.
pub fn profile_root(eta: &[f64], t: usize) -> Result<f64> {
    let size = eta.len();
    if t == 0 || t >= size {
        return Err(Error::InfiniteRoot { outcome_sum: t, size });
    }
    let target = t as f64;
    let residual = |tau: f64| eta.iter().map(|&e| expit(e + tau)).sum::<f64>() - target;

    let center = logit(target / size as f64);
    let spread = eta.iter().fold(0.0f64, |m, e| m.max(e.abs()));
    let (mut lo, mut hi) = (center - spread, center + spread);
    // Bracket endpoints may sit exactly on the root when all eta are equal.
    while hi - lo > BRACKET_WIDTH {
        let mid = 0.5 * (lo + hi);
        if residual(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }

    let mut tau = 0.5 * (lo + hi);
    let mut best = (residual(tau).abs(), tau);
    for _ in 0..MAX_POLISH_STEPS {
        if best.0 <= ROOT_TOLERANCE {
            break;
        }
        let (f, slope) = eta.iter().fold((-target, 0.0), |(f, d), &e| {
            let p = expit(e + tau);
            (f + p, d + p * (1.0 - p))
        });
        if slope <= 0.0 {
            break;
        }
        tau -= f / slope;
        let r = residual(tau).abs();
        if r < best.0 {
            best = (r, tau);
        }
    }
    Ok(best.1)
}

/// Profile root of one cluster at `beta`.
pub fn profile_tau(cluster: &Cluster, beta: &[f64]) -> Result<f64> {
    profile_root(&cluster.linear_predictors(beta), cluster.outcome_sum())
}

/// Average ordinary log-likelihood at explicit intercepts.
pub fn olr_avg_loglik(dataset: &Dataset, params: &Parameters) -> Result<f64> {
    dataset.check_beta(&params.beta)?;
    let b = params
        .cluster_effects
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("cluster effects required".into()))?;
    if b.len() != dataset.n_clusters() {
        return Err(Error::LengthMismatch { expected: dataset.n_clusters(), got: b.len() });
    }
    let mut total = 0.0;
    for (cluster, &bj) in dataset.clusters().iter().zip(b) {
        total += cluster_loglik(cluster, &params.beta, bj);
    }
    Ok(total / dataset.n_individuals() as f64)
}

fn cluster_loglik(cluster: &Cluster, beta: &[f64], intercept: f64) -> f64 {
    cluster
        .rows()
        .zip(cluster.outcomes())
        .map(|(x, &y)| {
            let s = dot(x, beta) + intercept;
            y as f64 * s - softplus(s)
        })
        .sum()
}

/// Value, gradient and profile roots of the average profile log-likelihood.
#[derive(Debug, Clone)]
pub struct ProfileEval {
    pub value: f64,
    pub score: Vec<f64>,
    pub tau: Vec<f64>,
}

/// Evaluates the profile log-likelihood and its gradient in one pass.
///
/// Because every root satisfies its mean-matching equation identically, the
/// derivative of `tau_j` drops out of the gradient.
pub fn profile_eval(dataset: &Dataset, beta: &[f64]) -> Result<ProfileEval> {
    dataset.check_beta(beta)?;
    let p = dataset.n_covariates();
    let mut value = 0.0;
    let mut score = vec![0.0; p];
    let mut tau = Vec::with_capacity(dataset.n_clusters());
    for cluster in dataset.clusters() {
        let eta = cluster.linear_predictors(beta);
        let tj = profile_root(&eta, cluster.outcome_sum())?;
        for ((x, &y), e) in cluster.rows().zip(cluster.outcomes()).zip(&eta) {
            let s = e + tj;
            value += y as f64 * s - softplus(s);
            let resid = y as f64 - expit(s);
            score.iter_mut().zip(x).for_each(|(g, v)| *g += resid * v);
        }
        tau.push(tj);
    }
    let n = dataset.n_individuals() as f64;
    score.iter_mut().for_each(|g| *g /= n);
    Ok(ProfileEval { value: value / n, score, tau })
}

/// Average profile log-likelihood `l^o(beta)`.
pub fn profile_loglik(dataset: &Dataset, beta: &[f64]) -> Result<f64> {
    Ok(profile_eval(dataset, beta)?.value)
}

/// Profile score, scaled by `1/N` so it is the gradient of [`profile_loglik`].
pub fn olr_profile_score(dataset: &Dataset, beta: &[f64]) -> Result<Vec<f64>> {
    Ok(profile_eval(dataset, beta)?.score)
}
