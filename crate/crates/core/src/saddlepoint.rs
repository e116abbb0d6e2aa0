//! Contour-integral representation of the replicated normalizer and its
//! exponential growth rate.
//!
//! With `rho = exp(-tau)` on the circle `|z| = rho`, Cauchy's formula for the
//! coefficient of `z^{R(K-T)}` in `prod_k (z + xi_k)^R` becomes
//!
//! ```text
//! g(R) = (1 / 2 pi) * integral_{-pi}^{pi} exp(R u(theta)) d theta,
//! u(theta) = -tau T - i (K - T) theta + sum_k log(e^{i theta} + exp(eta_k + tau)),
//! ```
//!
//! and the choice of `tau` as the profile root makes `u'(0) = 0`, so
//! `(1/R) log g(R) -> u(0)`.

use num_complex::Complex64;
use serde::Serialize;

use crate::conditional::log_g;
use crate::error::{Error, Result};
use crate::math::softplus;
use crate::model::profile_root;

/// `u(theta)` for one cluster, with the saddle `tau` solved once.
#[derive(Debug, Clone)]
pub struct SaddleFunction {
    eta: Vec<f64>,
    outcome_sum: usize,
    tau: f64,
}

impl SaddleFunction {
    pub fn new(eta: &[f64], outcome_sum: usize) -> Result<Self> {
        let tau = profile_root(eta, outcome_sum)?;
        Ok(Self { eta: eta.to_vec(), outcome_sum, tau })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    fn controls(&self) -> f64 {
        (self.eta.len() - self.outcome_sum) as f64
    }

    /// `u(theta)` on the principal branch of every logarithm.
    ///
    /// The imaginary part jumps by multiples of `2 pi` where a factor crosses
    /// the negative real axis; `exp(R u)` is unaffected for integer `R`.
    pub fn u(&self, theta: f64) -> Complex64 {
        let rot = Complex64::from_polar(1.0, theta);
        let logs: Complex64 = self.eta.iter().map(|&e| (rot + (e + self.tau).exp()).ln()).sum();
        Complex64::new(-self.tau * self.outcome_sum as f64, -self.controls() * theta) + logs
    }

    /// `u(0) = -tau T + sum_k log(1 + exp(eta_k + tau))`, computed in real arithmetic.
    pub fn u0(&self) -> f64 {
        -self.tau * self.outcome_sum as f64 + self.eta.iter().map(|&e| softplus(e + self.tau)).sum::<f64>()
    }

    /// Analytic `u'(theta) = -i (K - T) + sum_k i e^{i theta} / (e^{i theta} + exp(eta_k + tau))`.
    pub fn u_prime(&self, theta: f64) -> Complex64 {
        let rot = Complex64::from_polar(1.0, theta);
        let i = Complex64::i();
        let sum: Complex64 = self.eta.iter().map(|&e| rot / (rot + (e + self.tau).exp())).sum();
        i * (sum - self.controls())
    }

    /// `exp(R (u(theta) - u(0)))`, of modulus at most one.
    pub fn normalized_integrand(&self, replications: usize, theta: f64) -> Complex64 {
        let rot = Complex64::from_polar(1.0, theta);
        let r = replications as f64;
        // Each factor (e^{i theta} + c) / (1 + c) has modulus <= 1.
        let log_ratio: Complex64 = self
            .eta
            .iter()
            .map(|&e| {
                let c = (e + self.tau).exp();
                ((rot + c) / (1.0 + c)).ln()
            })
            .sum();
        (r * (log_ratio - Complex64::new(0.0, self.controls() * theta))).exp()
    }
}

/// `u(theta)` for the cluster predictors `eta` and outcome sum `t`.
pub fn u_of_theta(eta: &[f64], t: usize, theta: f64) -> Result<Complex64> {
    Ok(SaddleFunction::new(eta, t)?.u(theta))
}

/// Smallest accepted node count.
pub const MIN_NODES: usize = 256;
const MAX_DOUBLINGS: usize = 8;
const QUADRATURE_TOL: f64 = 1e-10;
const MAX_QUADRATURE_R: usize = 100_000;

/// Periodic trapezoid rule for `(1/2 pi) * integral exp(R(u - u0))`.
fn trapezoid(saddle: &SaddleFunction, replications: usize, nodes: usize) -> Complex64 {
    let h = 2.0 * std::f64::consts::PI / nodes as f64;
    let sum: Complex64 = (0..nodes)
        .map(|j| saddle.normalized_integrand(replications, -std::f64::consts::PI + j as f64 * h))
        .sum();
    sum / nodes as f64
}

/// Result of [`contour_integral_g`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContourIntegral {
    /// `log g`, as `R u(0) + log` of the normalized trapezoid sum.
    pub log_value: f64,
    /// Imaginary part of the normalized trapezoid sum.
    pub imag: f64,
    pub nodes: usize,
}

/// Log of the replicated normalizer from the contour integral.
///
/// The node count starts at `max(nodes, 2 R K)`, rounded up to a power of
/// two, and doubles until two successive results agree to `1e-10`.
pub fn contour_integral_g(eta: &[f64], t: usize, replications: usize, nodes: usize) -> Result<ContourIntegral> {
    if nodes < MIN_NODES {
        return Err(Error::InvalidInput(format!("at least {MIN_NODES} quadrature nodes required, got {nodes}")));
    }
    if replications == 0 || replications > MAX_QUADRATURE_R {
        return Err(Error::InvalidInput(format!("replication count {replications} outside 1..={MAX_QUADRATURE_R}")));
    }
    let saddle = SaddleFunction::new(eta, t)?;
    let mut n = nodes.max(2 * replications * eta.len()).next_power_of_two();
    let mut prev = trapezoid(&saddle, replications, n);
    let mut change = f64::INFINITY;
    for _ in 0..MAX_DOUBLINGS {
        n *= 2;
        let next = trapezoid(&saddle, replications, n);
        change = (next.re.ln() - prev.re.ln()).abs();
        prev = next;
        if change <= QUADRATURE_TOL {
            return Ok(ContourIntegral {
                log_value: replications as f64 * saddle.u0() + next.re.ln(),
                imag: next.im,
                nodes: n,
            });
        }
    }
    Err(Error::QuadratureNotConverged { change, nodes: n })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SaddleDiagnostics {
    pub tau: f64,
    pub u0: f64,
    pub u_prime0_abs: f64,
    pub r_grid: Vec<usize>,
    /// `(1/R) log g` for every `R` of the grid.
    pub exact_rates: Vec<f64>,
    /// `|rate - u0|`.
    pub gaps: Vec<f64>,
    /// `(R, relative error of the contour integral against the DP)`.
    pub quadrature_vs_dp: Option<Vec<(usize, f64)>>,
    /// Smallest `C` with `gap(R) <= C (1 + ln R) / R` on the grid.
    pub envelope_constant: f64,
}

/// Exact growth rates `(1/R) log g` over `r_grid` against the limit `u(0)`.
///
/// With `quadrature_max_r`, the contour integral is cross-checked against the
/// DP for every grid value up to that bound.
pub fn rate_limit_check(
    eta: &[f64],
    t: usize,
    r_grid: &[usize],
    quadrature_max_r: Option<usize>,
) -> Result<SaddleDiagnostics> {
    if r_grid.is_empty() || r_grid[0] == 0 || r_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput("replication grid must be ascending and positive".into()));
    }
    let saddle = SaddleFunction::new(eta, t)?;
    let u0 = saddle.u0();
    let mut exact_rates = Vec::with_capacity(r_grid.len());
    let mut quad = Vec::new();
    for &r in r_grid {
        let dp = log_g(eta, r, t)?.value;
        exact_rates.push(dp / r as f64);
        if quadrature_max_r.is_some_and(|max| r <= max) {
            let q = contour_integral_g(eta, t, r, MIN_NODES)?;
            quad.push((r, ((q.log_value - dp) / dp).abs()));
        }
    }
    let gaps: Vec<f64> = exact_rates.iter().map(|rate| (rate - u0).abs()).collect();
    let envelope_constant = r_grid
        .iter()
        .zip(&gaps)
        .map(|(&r, g)| g * r as f64 / (1.0 + (r as f64).ln()))
        .fold(0.0, f64::max);
    Ok(SaddleDiagnostics {
        tau: saddle.tau(),
        u0,
        u_prime0_abs: saddle.u_prime(0.0).norm(),
        r_grid: r_grid.to_vec(),
        exact_rates,
        gaps,
        quadrature_vs_dp: quadrature_max_r.map(|_| quad),
        envelope_constant,
    })
}
