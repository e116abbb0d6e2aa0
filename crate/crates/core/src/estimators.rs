//! Concave maximization for the MLE, the CMLE and the replicated CMLE, and the
//! closed-form MLE/CMLE relations for matched-pair and 1:K designs.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::conditional::{clr_eval, clr_rep_eval, ConditionalEval};
use crate::error::{Error, Result};
use crate::math::inf_norm;
use crate::model::{profile_eval, Dataset, FitResult, Method};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverConfig {
    /// Convergence threshold on the inf-norm of the (1/N-scaled) score.
    pub grad_tol: f64,
    pub max_iter: usize,
    /// `|beta|_inf` beyond which the fit is declared divergent.
    pub divergence_norm: f64,
    pub step_shrink: f64,
    pub armijo_c: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { grad_tol: 1e-8, max_iter: 200, divergence_norm: 1e4, step_shrink: 0.5, armijo_c: 1e-4 }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.grad_tol, self.divergence_norm, self.armijo_c].iter().all(|v| *v > 0.0);
        if !positive || self.max_iter == 0 || !(self.step_shrink > 0.0 && self.step_shrink < 1.0) {
            return Err(Error::InvalidInput(format!("invalid solver configuration {self:?}")));
        }
        Ok(())
    }
}

/// Smooth concave objective with an analytic gradient.
pub trait Objective {
    fn eval(&self, beta: &[f64]) -> Result<(f64, Vec<f64>)>;

    fn value(&self, beta: &[f64]) -> Result<f64> {
        Ok(self.eval(beta)?.0)
    }
}

impl<F> Objective for F
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    fn eval(&self, beta: &[f64]) -> Result<(f64, Vec<f64>)> {
        self(beta)
    }
}

/// Outcome of [`maximize`].
#[derive(Debug, Clone)]
pub struct Maximum {
    pub beta: Vec<f64>,
    pub value: f64,
    pub grad_inf_norm: f64,
    pub iterations: usize,
    pub trace: Vec<f64>,
}

const MAX_BACKTRACKS: usize = 60;
// Converged Newton steps are this small relative to max(1, |beta|_inf).
const STEP_TOL: f64 = 1e-5;

/// Forward-difference Hessian of the analytic gradient, symmetrized.
fn fd_hessian(objective: &dyn Objective, beta: &[f64], grad: &[f64]) -> Result<DMatrix<f64>> {
    let p = beta.len();
    let mut h = DMatrix::zeros(p, p);
    let mut shifted = beta.to_vec();
    for i in 0..p {
        let step = 1e-6 * beta[i].abs().max(1.0);
        shifted[i] = beta[i] + step;
        let (_, g) = objective.eval(&shifted)?;
        shifted[i] = beta[i];
        for j in 0..p {
            h[(j, i)] = (g[j] - grad[j]) / step;
        }
    }
    Ok((&h + h.transpose()) * 0.5)
}

/// Newton direction `-H^{-1} g` when `-H` is positive definite.
fn newton_direction(hessian: &DMatrix<f64>, grad: &[f64]) -> Option<Vec<f64>> {
    let chol = (-hessian).cholesky()?;
    let d = chol.solve(&DVector::from_column_slice(grad));
    let d: Vec<f64> = d.iter().copied().collect();
    d.iter().all(|v| v.is_finite()).then_some(d)
}

fn slope(grad: &[f64], dir: &[f64]) -> f64 {
    grad.iter().zip(dir).map(|(g, d)| g * d).sum()
}

/// Damped Newton ascent with Armijo backtracking; falls back to gradient
/// ascent whenever the Newton direction is unavailable or fails to ascend.
///
/// Convergence requires both the score inf-norm below `grad_tol` and a small
/// Newton step: under separation the score vanishes only asymptotically while
/// the Newton step stays of order one.
pub fn maximize(objective: &dyn Objective, start: &[f64], cfg: &SolverConfig) -> Result<Maximum> {
    cfg.validate()?;
    let mut beta = start.to_vec();
    let (mut value, mut grad) = objective.eval(&beta)?;
    let mut trace = vec![value];
    for iter in 0..cfg.max_iter {
        let norm = inf_norm(&beta);
        if norm > cfg.divergence_norm {
            return Err(Error::Divergence { norm });
        }
        let hessian = fd_hessian(objective, &beta, &grad)?;
        let newton = newton_direction(&hessian, &grad);
        let grad_norm = inf_norm(&grad);
        if grad_norm <= cfg.grad_tol {
            match newton.as_deref().map(inf_norm) {
                Some(step) if step <= STEP_TOL * norm.max(1.0) => {
                    // Take the final full Newton step when it shrinks the score.
                    // The objective gain is below rounding here, hence the slack.
                    let dir = newton.as_deref().unwrap_or_default();
                    let trial: Vec<f64> = beta.iter().zip(dir).map(|(b, d)| b + d).collect();
                    let slack = 4.0 * f64::EPSILON * value.abs().max(1.0);
                    if let Ok((v, g)) = objective.eval(&trial) {
                        if v >= value - slack && inf_norm(&g) < grad_norm {
                            trace.push(v);
                            let grad_inf_norm = inf_norm(&g);
                            return Ok(Maximum { beta: trial, value: v, grad_inf_norm, iterations: iter + 1, trace });
                        }
                    }
                    return Ok(Maximum { beta, value, grad_inf_norm: grad_norm, iterations: iter, trace });
                }
                Some(_) => {}
                // Vanishing score without curvature: the objective flattens
                // towards a supremum at infinity.
                None => return Err(Error::Divergence { norm }),
            }
        }

        let slack = 4.0 * f64::EPSILON * value.abs().max(1.0);
        let mut accepted = None;
        let newton = newton.filter(|d| slope(&grad, d) > 0.0);
        let directions = newton.into_iter().chain(std::iter::once(grad.clone()));
        'dirs: for dir in directions {
            let m = slope(&grad, &dir);
            let mut t = 1.0;
            for _ in 0..MAX_BACKTRACKS {
                let trial: Vec<f64> = beta.iter().zip(&dir).map(|(b, d)| b + t * d).collect();
                if let Ok((v, g)) = objective.eval(&trial) {
                    if v.is_finite() && v >= value + cfg.armijo_c * t * m - slack {
                        accepted = Some((trial, v, g));
                        break 'dirs;
                    }
                }
                t *= cfg.step_shrink;
            }
        }
        match accepted {
            Some((b, v, g)) => {
                beta = b;
                value = v;
                grad = g;
                trace.push(value);
            }
            // No ascent possible from here; the point is as stationary as the
            // arithmetic allows.
            None => break,
        }
    }
    let grad_norm = inf_norm(&grad);
    let norm = inf_norm(&beta);
    if norm > cfg.divergence_norm {
        return Err(Error::Divergence { norm });
    }
    if grad_norm <= cfg.grad_tol {
        // Flat objective but still moving: the supremum is at infinity.
        if trace.len() > cfg.max_iter {
            return Err(Error::Divergence { norm });
        }
        return Ok(Maximum { beta, value, grad_inf_norm: grad_norm, iterations: trace.len() - 1, trace });
    }
    Err(Error::MaxIterations(cfg.max_iter))
}

/// Rank of the stacked `[X | cluster indicators]` matrix must be `P + J`.
///
/// The cluster indicators span every within-cluster constant, so the stacked
/// matrix has full column rank exactly when the within-cluster centred
/// covariates have rank `P`.
pub fn check_column_rank(dataset: &Dataset) -> Result<()> {
    let p = dataset.n_covariates();
    let mut rows = Vec::with_capacity(dataset.n_individuals() * p);
    for cluster in dataset.clusters() {
        let k = cluster.size() as f64;
        let mut mean = vec![0.0; p];
        for x in cluster.rows() {
            mean.iter_mut().zip(x).for_each(|(m, v)| *m += v / k);
        }
        for x in cluster.rows() {
            rows.extend(x.iter().zip(&mean).map(|(v, m)| v - m));
        }
    }
    let centred = DMatrix::from_row_slice(dataset.n_individuals(), p, &rows);
    let sv = centred.singular_values();
    let max = sv.max();
    let tol = max * 1e-10 * dataset.n_individuals().max(p) as f64;
    let rank = if max > 0.0 { sv.iter().filter(|s| **s > tol).count() } else { 0 };
    if rank < p {
        return Err(Error::RankDeficient { rank: rank + dataset.n_clusters(), required: p + dataset.n_clusters() });
    }
    Ok(())
}

fn fit(dataset: &Dataset, method: Method, start: &[f64], cfg: &SolverConfig) -> Result<FitResult> {
    dataset.check_beta(start)?;
    check_column_rank(dataset)?;
    let max = match method {
        Method::Mle => {
            let f = |b: &[f64]| profile_eval(dataset, b).map(|e| (e.value, e.score));
            maximize(&f, start, cfg)?
        }
        Method::Cmle => {
            let f = |b: &[f64]| clr_eval(dataset, b).map(|ConditionalEval { value, score }| (value, score));
            maximize(&f, start, cfg)?
        }
        Method::CmleReplicated(r) => {
            let f = |b: &[f64]| clr_rep_eval(dataset, r, b).map(|ConditionalEval { value, score }| (value, score));
            maximize(&f, start, cfg)?
        }
    };
    let tau = match method {
        Method::Mle => Some(profile_eval(dataset, &max.beta)?.tau),
        _ => None,
    };
    Ok(FitResult {
        beta_hat: max.beta,
        tau,
        objective: max.value,
        grad_inf_norm: max.grad_inf_norm,
        iterations: max.iterations,
        method,
        converged: true,
        trace: max.trace,
    })
}

/// Ordinary MLE through the profile likelihood, started at zero.
pub fn solve_mle(dataset: &Dataset, cfg: &SolverConfig) -> Result<FitResult> {
    solve_mle_from(dataset, cfg, &vec![0.0; dataset.n_covariates()])
}

pub fn solve_mle_from(dataset: &Dataset, cfg: &SolverConfig, start: &[f64]) -> Result<FitResult> {
    fit(dataset, Method::Mle, start, cfg)
}

/// Conditional MLE, started at zero.
pub fn solve_cmle(dataset: &Dataset, cfg: &SolverConfig) -> Result<FitResult> {
    solve_cmle_from(dataset, cfg, &vec![0.0; dataset.n_covariates()])
}

pub fn solve_cmle_from(dataset: &Dataset, cfg: &SolverConfig, start: &[f64]) -> Result<FitResult> {
    fit(dataset, Method::Cmle, start, cfg)
}

/// Conditional MLE of the `R`-fold replicated data, started at zero.
pub fn solve_cmle_replicated(dataset: &Dataset, replications: usize, cfg: &SolverConfig) -> Result<FitResult> {
    solve_cmle_replicated_from(dataset, replications, cfg, &vec![0.0; dataset.n_covariates()])
}

pub fn solve_cmle_replicated_from(
    dataset: &Dataset,
    replications: usize,
    cfg: &SolverConfig,
    start: &[f64],
) -> Result<FitResult> {
    if replications == 0 {
        return Err(Error::InvalidInput("replication count must be at least 1".into()));
    }
    fit(dataset, Method::CmleReplicated(replications), start, cfg)
}

/// Replicated CMLEs along an ascending grid of `R`, each warm-started at the
/// previous solution.
pub fn solve_cmle_path(dataset: &Dataset, r_values: &[usize], cfg: &SolverConfig) -> Result<Vec<FitResult>> {
    let mut start = vec![0.0; dataset.n_covariates()];
    let mut fits = Vec::with_capacity(r_values.len());
    for &r in r_values {
        let fit = solve_cmle_replicated_from(dataset, r, cfg, &start)?;
        start.clone_from(&fit.beta_hat);
        fits.push(fit);
    }
    Ok(fits)
}

/// Both sides of a closed-form MLE/CMLE relation evaluated at the fitted values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelationReport {
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    /// Largest componentwise `|lhs - rhs|`.
    pub abs_gap: f64,
    pub beta_cmle: Vec<f64>,
    pub beta_mle: Vec<f64>,
    /// Number of clusters with outcome sum `t`, for `t = 1..=K` (1:K designs only).
    pub n_t: Vec<usize>,
    /// Number of controls per cluster (1:K designs only).
    pub controls: Option<usize>,
}

fn gap(lhs: &[f64], rhs: &[f64]) -> f64 {
    lhs.iter().zip(rhs).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
}

/// Matched pairs (`K_j = 2`): the MLE is exactly twice the CMLE.
pub fn verify_pair_identity(dataset: &Dataset, cfg: &SolverConfig) -> Result<RelationReport> {
    if let Some(c) = dataset.clusters().iter().find(|c| c.size() != 2) {
        return Err(Error::Design(format!("matched-pair identity needs clusters of size 2, found {}", c.size())));
    }
    let mle = solve_mle(dataset, cfg)?;
    let cmle = solve_cmle(dataset, cfg)?;
    let lhs = mle.beta_hat.clone();
    let rhs: Vec<f64> = cmle.beta_hat.iter().map(|b| 2.0 * b).collect();
    Ok(RelationReport {
        abs_gap: gap(&lhs, &rhs),
        lhs,
        rhs,
        beta_cmle: cmle.beta_hat,
        beta_mle: mle.beta_hat,
        n_t: Vec::new(),
        controls: None,
    })
}

/// Left side of the 1:K relation: expected number of clusters whose treated
/// unit is a control, under the conditional model at `beta_cmle`.
pub fn one_to_k_lhs(n_t: &[usize], controls: usize, beta_cmle: f64) -> f64 {
    let k = controls as f64;
    n_t.iter()
        .enumerate()
        .map(|(i, &n)| {
            let t = (i + 1) as f64;
            n as f64 / (1.0 + t / (k - t + 1.0) * beta_cmle.exp())
        })
        .sum()
}

/// Right side of the 1:K relation: the same count under the ordinary model at
/// `beta_mle`, with the profile root of every outcome-sum class in closed form.
///
/// The discriminant uses the cluster size `K + 1`:
/// `[(t-1)e^b - (K-t)]^2 + 4t(K+1-t)e^b`.
pub fn one_to_k_rhs(n_t: &[usize], controls: usize, beta_mle: f64) -> f64 {
    let k = controls as f64;
    let e = beta_mle.exp();
    n_t.iter()
        .enumerate()
        .map(|(i, &n)| {
            let t = (i + 1) as f64;
            let delta = ((t - 1.0) * e - (k - t)).powi(2) + 4.0 * t * (k + 1.0 - t) * e;
            let denom = 2.0 * (k - t + 1.0);
            n as f64 / (1.0 + (t - 1.0) / denom * e - (k - t) / denom + delta.sqrt() / denom)
        })
        .sum()
}

/// 1:K matched treatment-control design with the treatment indicator as the
/// only covariate: checks the closed-form relation between MLE and CMLE.
pub fn verify_1k_identity(dataset: &Dataset, cfg: &SolverConfig) -> Result<RelationReport> {
    if dataset.n_covariates() != 1 {
        return Err(Error::Design(format!("1:K identity needs P = 1, found {}", dataset.n_covariates())));
    }
    let size = dataset.clusters()[0].size();
    if size < 3 {
        return Err(Error::Design(format!("1:K identity needs K > 1 controls, found {}", size.saturating_sub(1))));
    }
    let controls = size - 1;
    let mut n_t = vec![0usize; controls];
    for c in dataset.clusters() {
        if c.size() != size {
            return Err(Error::Design("clusters must share one size".into()));
        }
        let treated_first = c.row(0)[0] == 1.0 && c.rows().skip(1).all(|x| x[0] == 0.0);
        if !treated_first {
            return Err(Error::Design("first individual must be treated (1), the rest controls (0)".into()));
        }
        n_t[c.outcome_sum() - 1] += 1;
    }
    let mle = solve_mle(dataset, cfg)?;
    let cmle = solve_cmle(dataset, cfg)?;
    let lhs = one_to_k_lhs(&n_t, controls, cmle.beta_hat[0]);
    let rhs = one_to_k_rhs(&n_t, controls, mle.beta_hat[0]);
    Ok(RelationReport {
        lhs: vec![lhs],
        rhs: vec![rhs],
        abs_gap: (lhs - rhs).abs(),
        beta_cmle: cmle.beta_hat,
        beta_mle: mle.beta_hat,
        n_t,
        controls: Some(controls),
    })
}
