//! Seeded Monte Carlo study of the MLE and the replicated CMLE on a
//! 1:(K-1) matched treatment-control design.
//!
//! # Random stream contract (`clogit-rng-v1`)
//!
//! Replicate `i` draws from `ChaCha20Rng::seed_from_u64(seed)` switched to
//! stream `i`. For every cluster `j = 1..J`, in order:
//!
//! 1. `K` standard normals (ziggurat, `rand_distr::StandardNormal`) for the
//!    second covariate `X_{j,k,2}`;
//! 2. one standard normal `delta_j`;
//! 3. `K` uniforms on `[0, 1)`; `Y_{j,k} = 1` iff the uniform is below
//!    `expit(b_j + beta_1 X_{j,k,1} + beta_2 X_{j,k,2})`.
//!
//! The first covariate is the treatment indicator `(1, 0, ..., 0)` and
//! `b_j = delta_j - 5 mean_k X_{j,k,1} + 3 mean_k X_{j,k,2}`. Ports in other
//! languages are expected to match the distributions, not the bit stream.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::{solve_cmle_path, solve_mle, SolverConfig};
use crate::math::expit;
use crate::model::{screen_dataset, Cluster, Dataset};

pub const RNG_CONTRACT: &str = "clogit-rng-v1";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConfig {
    pub clusters: usize,
    pub cluster_size: usize,
    pub beta_true: [f64; 2],
    pub n_sims: usize,
    pub r_values: Vec<usize>,
    pub seed: u64,
    pub workers: usize,
    pub solver: SolverConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            clusters: 100,
            cluster_size: 3,
            beta_true: [0.5, 0.8],
            n_sims: 10_000,
            r_values: vec![1, 2, 3, 4, 5, 10, 15, 20, 50, 80],
            seed: 0,
            workers: 1,
            solver: SolverConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clusters == 0 {
            return Err(Error::InvalidInput("at least one cluster required".into()));
        }
        if self.cluster_size < 2 {
            return Err(Error::InvalidInput("cluster size must be at least 2".into()));
        }
        if self.n_sims == 0 {
            return Err(Error::InvalidInput("at least one simulation required".into()));
        }
        if self.workers == 0 {
            return Err(Error::InvalidInput("at least one worker required".into()));
        }
        let r = &self.r_values;
        if r.is_empty() || r[0] == 0 || r.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput("replication grid must be ascending and positive".into()));
        }
        self.solver.validate()
    }
}

/// Unscreened clusters of one replicate, in generation order.
pub fn generate_clusters(cfg: &SimConfig, replicate_index: u64) -> Result<Vec<Cluster>> {
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    rng.set_stream(replicate_index);
    let k = cfg.cluster_size;
    let [b1, b2] = cfg.beta_true;
    let mut clusters = Vec::with_capacity(cfg.clusters);
    for _ in 0..cfg.clusters {
        let x2: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
        let delta: f64 = rng.sample(StandardNormal);
        let mean_x1 = 1.0 / k as f64;
        let mean_x2 = x2.iter().sum::<f64>() / k as f64;
        let intercept = delta - 5.0 * mean_x1 + 3.0 * mean_x2;
        let mut rows = Vec::with_capacity(k);
        let mut outcomes = Vec::with_capacity(k);
        for (i, &z) in x2.iter().enumerate() {
            let x1 = if i == 0 { 1.0 } else { 0.0 };
            let p = expit(intercept + b1 * x1 + b2 * z);
            let u: f64 = rng.random();
            outcomes.push(u8::from(u < p));
            rows.push(vec![x1, z]);
        }
        clusters.push(Cluster::new(rows, outcomes)?);
    }
    Ok(clusters)
}

/// One screened replicate dataset.
pub fn generate_dataset(cfg: &SimConfig, replicate_index: u64) -> Result<Dataset> {
    screen_dataset(generate_clusters(cfg, replicate_index)?)
}

#[derive(Debug, Clone, PartialEq)]
struct Fitted {
    mle: Vec<f64>,
    cmle: Vec<Vec<f64>>,
    dropped: usize,
}

fn run_replicate(cfg: &SimConfig, index: u64) -> Option<Fitted> {
    let fitted = || -> Result<Fitted> {
        let ds = generate_dataset(cfg, index)?;
        let mle = solve_mle(&ds, &cfg.solver)?;
        let path = solve_cmle_path(&ds, &cfg.r_values, &cfg.solver)?;
        Ok(Fitted {
            mle: mle.beta_hat,
            cmle: path.into_iter().map(|f| f.beta_hat).collect(),
            dropped: ds.dropped_concordant(),
        })
    };
    fitted().map_err(|e| log::debug!("replicate {index} failed: {e}")).ok()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    /// `mle` or `cmle`.
    pub method: String,
    pub replications: Option<usize>,
    pub mean: Vec<f64>,
    /// Sample variance across successful replicates; NaN with fewer than two.
    pub variance: Vec<f64>,
    pub n_used: usize,
    pub n_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationSummary {
    pub rows: Vec<SummaryRow>,
    pub seed: u64,
    pub n_sims: usize,
    pub rng_contract: &'static str,
    /// Concordant clusters dropped, summed over successful replicates.
    pub dropped_concordant_total: usize,
}

fn mean_and_variance(samples: &[&[f64]], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let n = samples.len() as f64;
    let mut mean = vec![0.0; dim];
    for s in samples {
        mean.iter_mut().zip(s.iter()).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    if samples.len() < 2 {
        return (mean, vec![f64::NAN; dim]);
    }
    for s in samples {
        var.iter_mut().zip(s.iter().zip(&mean)).for_each(|(v, (x, m))| *v += (x - m).powi(2));
    }
    var.iter_mut().for_each(|v| *v /= n - 1.0);
    (mean, var)
}

/// Runs the study. Replicates failing for any method are excluded from every
/// summary row; results do not depend on the number of workers.
pub fn run_study(cfg: &SimConfig) -> Result<SimulationSummary> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    let outcomes: Vec<Option<Fitted>> =
        pool.install(|| (0..cfg.n_sims as u64).into_par_iter().map(|i| run_replicate(cfg, i)).collect());

    let fitted: Vec<&Fitted> = outcomes.iter().flatten().collect();
    let n_failed = cfg.n_sims - fitted.len();
    log::info!("{} of {} replicates fitted", fitted.len(), cfg.n_sims);

    let mut rows = Vec::with_capacity(cfg.r_values.len() + 1);
    let row = |method: &str, replications, samples: Vec<&[f64]>| {
        let (mean, variance) = if samples.is_empty() {
            (vec![f64::NAN; 2], vec![f64::NAN; 2])
        } else {
            mean_and_variance(&samples, 2)
        };
        SummaryRow { method: method.into(), replications, mean, variance, n_used: samples.len(), n_failed }
    };
    rows.push(row("mle", None, fitted.iter().map(|f| f.mle.as_slice()).collect()));
    for (i, &r) in cfg.r_values.iter().enumerate() {
        rows.push(row("cmle", Some(r), fitted.iter().map(|f| f.cmle[i].as_slice()).collect()));
    }
    Ok(SimulationSummary {
        rows,
        seed: cfg.seed,
        n_sims: cfg.n_sims,
        rng_contract: RNG_CONTRACT,
        dropped_concordant_total: fitted.iter().map(|f| f.dropped).sum(),
    })
}

fn fmt_value(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        "NA".into()
    }
}

impl SimulationSummary {
    pub const CSV_HEADER: &'static str = "method,R,mean_b1,mean_b2,var_b1,var_b2,n_used,n_failed";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            let r = row.replications.map(|r| r.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                row.method,
                r,
                fmt_value(row.mean[0]),
                fmt_value(row.mean[1]),
                fmt_value(row.variance[0]),
                fmt_value(row.variance[1]),
                row.n_used,
                row.n_failed
            ));
        }
        out
    }

    /// JSON rendering; non-finite numbers become `null`.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }

    pub fn row(&self, method: &str, replications: Option<usize>) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.method == method && r.replications == replications)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SimConfig {
        SimConfig { clusters: 20, n_sims: 4, r_values: vec![1, 2], seed: 11, ..SimConfig::default() }
    }

    #[test]
    fn design_shape() {
        let cfg = small();
        let clusters = generate_clusters(&cfg, 0).unwrap();
        assert_eq!(clusters.len(), 20);
        for c in &clusters {
            assert_eq!(c.size(), 3);
            let treated: Vec<f64> = c.rows().map(|x| x[0]).collect();
            assert_eq!(treated, vec![1.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn deterministic_streams() {
        let cfg = small();
        assert_eq!(generate_clusters(&cfg, 3).unwrap(), generate_clusters(&cfg, 3).unwrap());
        assert_ne!(generate_clusters(&cfg, 3).unwrap(), generate_clusters(&cfg, 4).unwrap());
    }

    #[test]
    fn sample_variance_edge_cases() {
        let a = [1.0, 2.0];
        let (m, v) = mean_and_variance(&[&a], 2);
        assert_eq!(m, vec![1.0, 2.0]);
        assert!(v.iter().all(|x| x.is_nan()));
        let b = [3.0, 2.0];
        let (m, v) = mean_and_variance(&[&a, &b], 2);
        assert_eq!(m, vec![2.0, 2.0]);
        assert_eq!(v, vec![2.0, 0.0]);
    }

    #[test]
    fn config_validation() {
        let bad = [
            SimConfig { clusters: 0, ..small() },
            SimConfig { cluster_size: 1, ..small() },
            SimConfig { n_sims: 0, ..small() },
            SimConfig { workers: 0, ..small() },
            SimConfig { r_values: vec![2, 1], ..small() },
            SimConfig { r_values: vec![], ..small() },
        ];
        for cfg in bad {
            assert!(run_study(&cfg).is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn csv_marks_undefined_variance() {
        let cfg = SimConfig { n_sims: 1, ..small() };
        let summary = run_study(&cfg).unwrap();
        let csv = summary.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], SimulationSummary::CSV_HEADER);
        assert_eq!(lines.len(), 1 + 1 + cfg.r_values.len());
        assert!(lines[1].starts_with("mle,,"));
        assert!(lines[1].contains(",NA,NA,"));
        assert!(summary.to_json().contains("null"));
    }
}
