//! The `clogit` command line: `fit`, `simulate`, `asymptotics` and `replay`.
//!
//! Exit status is 0 on success, 1 on input errors and 2 on numerical or
//! solver failures. Every file written with `--out` gets a sibling
//! `<out>.manifest.json` recording the command line, configuration, seed,
//! library version and runtime; `replay --manifest` re-runs it.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{solve_cmle, solve_cmle_replicated, solve_mle, SolverConfig};
use crate::io::read_clusters_from_path;
use crate::model::{screen_dataset, Dataset, FitResult};
use crate::saddlepoint::rate_limit_check;
use crate::simulation::{run_study, SimConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "clogit", version, about = "Ordinary and conditional logistic regression for matched clusters")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitMethod {
    Mle,
    Cmle,
    #[value(name = "cmle-r")]
    CmleR,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one estimator to a CSV dataset.
    Fit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        method: FitMethod,
        /// Replication count, required for cmle-r.
        #[arg(long)]
        replications: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Defaults to table on stdout and json with --out.
        #[arg(long, value_enum)]
        format: Option<Format>,
        #[arg(long, default_value_t = SolverConfig::default().grad_tol)]
        tol: f64,
        #[arg(long, default_value_t = SolverConfig::default().max_iter)]
        max_iter: usize,
    },
    /// Monte Carlo study of MLE and replicated CMLE on the matched design.
    Simulate {
        #[arg(long, default_value_t = SimConfig::default().clusters)]
        clusters: usize,
        #[arg(long, default_value_t = SimConfig::default().cluster_size)]
        cluster_size: usize,
        #[arg(long, default_value_t = SimConfig::default().n_sims)]
        n_sims: usize,
        /// Comma-separated ascending replication counts.
        #[arg(long, default_value = "1,2,3,4,5,10,15,20,50,80")]
        replications: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Summary CSV path.
        #[arg(long)]
        out: PathBuf,
        /// Optional JSON summary path.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Growth-rate and contour-integral diagnostics per cluster at a fixed beta.
    Asymptotics {
        #[arg(long)]
        input: PathBuf,
        /// Comma-separated coefficients.
        #[arg(long, allow_hyphen_values = true)]
        beta: String,
        #[arg(long, default_value = "1,2,5,10,20,50")]
        r_grid: String,
        #[arg(long, default_value_t = 5)]
        quadrature_max_r: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-run the command recorded in a manifest.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command_line: Vec<String>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub version: String,
    pub runtime_seconds: f64,
}

fn parse_list<T: std::str::FromStr>(raw: &str, what: &str) -> Result<Vec<T>> {
    raw.split(',')
        .map(|s| s.trim().parse::<T>().map_err(|_| Error::InvalidInput(format!("invalid {what} entry {s:?}"))))
        .collect()
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    let ds = screen_dataset(read_clusters_from_path(path)?)?;
    if ds.dropped_concordant() > 0 {
        log::info!("dropped {} concordant clusters", ds.dropped_concordant());
    }
    Ok(ds)
}

#[derive(Debug, Serialize)]
struct FitReport<'a> {
    method: FitMethod,
    replications: Option<usize>,
    beta_hat: &'a [f64],
    objective: f64,
    grad_inf_norm: f64,
    iterations: usize,
    converged: bool,
    clusters: usize,
    individuals: usize,
    dropped_concordant: usize,
}

impl FitReport<'_> {
    fn render(&self, format: Format) -> String {
        match format {
            Format::Json => serde_json::to_string_pretty(self).expect("report serializes") + "\n",
            Format::Csv => {
                let betas: Vec<String> = (1..=self.beta_hat.len()).map(|i| format!("beta{i}")).collect();
                let values: Vec<String> = self.beta_hat.iter().map(|b| b.to_string()).collect();
                format!(
                    "method,R,objective,grad_inf_norm,iterations,converged,clusters,individuals,dropped_concordant,{}\n{},{},{},{},{},{},{},{},{},{}\n",
                    betas.join(","),
                    method_name(self.method),
                    self.replications.map(|r| r.to_string()).unwrap_or_default(),
                    self.objective,
                    self.grad_inf_norm,
                    self.iterations,
                    self.converged,
                    self.clusters,
                    self.individuals,
                    self.dropped_concordant,
                    values.join(",")
                )
            }
            Format::Table => {
                let mut s = String::new();
                s.push_str(&format!("method              {}\n", method_name(self.method)));
                if let Some(r) = self.replications {
                    s.push_str(&format!("replications        {r}\n"));
                }
                s.push_str(&format!("clusters            {}\n", self.clusters));
                s.push_str(&format!("individuals         {}\n", self.individuals));
                s.push_str(&format!("dropped concordant  {}\n", self.dropped_concordant));
                s.push_str(&format!("converged           {}\n", self.converged));
                s.push_str(&format!("iterations          {}\n", self.iterations));
                s.push_str(&format!("objective           {:.12}\n", self.objective));
                s.push_str(&format!("grad inf-norm       {:.3e}\n", self.grad_inf_norm));
                for (i, b) in self.beta_hat.iter().enumerate() {
                    s.push_str(&format!("beta[{}]             {b:.9}\n", i + 1));
                }
                s
            }
        }
    }
}

fn method_name(m: FitMethod) -> &'static str {
    match m {
        FitMethod::Mle => "mle",
        FitMethod::Cmle => "cmle",
        FitMethod::CmleR => "cmle-r",
    }
}

struct Outcome {
    /// Text for stdout, if any.
    stdout: Option<String>,
    /// Primary artifact path and the manifest payload for it.
    artifact: Option<(PathBuf, serde_json::Value, Option<u64>)>,
}

fn cmd_fit(
    input: &Path,
    method: FitMethod,
    replications: Option<usize>,
    out: Option<&Path>,
    format: Option<Format>,
    tol: f64,
    max_iter: usize,
) -> Result<Outcome> {
    let cfg = SolverConfig { grad_tol: tol, max_iter, ..SolverConfig::default() };
    cfg.validate()?;
    let replications = match (method, replications) {
        (FitMethod::CmleR, None) => {
            return Err(Error::InvalidInput("--replications is required with --method cmle-r".into()))
        }
        (FitMethod::CmleR, Some(0)) => return Err(Error::InvalidInput("--replications must be at least 1".into())),
        (FitMethod::CmleR, r) => r,
        (_, _) => None,
    };
    let ds = load_dataset(input)?;
    let fit: FitResult = match method {
        FitMethod::Mle => solve_mle(&ds, &cfg)?,
        FitMethod::Cmle => solve_cmle(&ds, &cfg)?,
        FitMethod::CmleR => solve_cmle_replicated(&ds, replications.unwrap_or(1), &cfg)?,
    };
    let report = FitReport {
        method,
        replications,
        beta_hat: &fit.beta_hat,
        objective: fit.objective,
        grad_inf_norm: fit.grad_inf_norm,
        iterations: fit.iterations,
        converged: fit.converged,
        clusters: ds.n_clusters(),
        individuals: ds.n_individuals(),
        dropped_concordant: ds.dropped_concordant(),
    };
    let config = serde_json::json!({ "method": method, "replications": replications, "solver": cfg });
    match out {
        Some(path) => {
            write_file(path, &report.render(format.unwrap_or(Format::Json)))?;
            Ok(Outcome { stdout: None, artifact: Some((path.to_path_buf(), config, None)) })
        }
        None => Ok(Outcome { stdout: Some(report.render(format.unwrap_or(Format::Table))), artifact: None }),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    clusters: usize,
    cluster_size: usize,
    n_sims: usize,
    replications: &str,
    seed: u64,
    workers: usize,
    out: &Path,
    json: Option<&Path>,
) -> Result<Outcome> {
    let cfg = SimConfig {
        clusters,
        cluster_size,
        n_sims,
        r_values: parse_list(replications, "replication")?,
        seed,
        workers,
        ..SimConfig::default()
    };
    let summary = run_study(&cfg)?;
    write_file(out, &summary.to_csv())?;
    if let Some(path) = json {
        write_file(path, &(summary.to_json() + "\n"))?;
    }
    let config = serde_json::to_value(&cfg).expect("config serializes");
    Ok(Outcome { stdout: None, artifact: Some((out.to_path_buf(), config, Some(seed))) })
}

fn fmt_num(v: f64) -> String {
    format!("{v}")
}

fn cmd_asymptotics(input: &Path, beta: &str, r_grid: &str, quadrature_max_r: usize, out: &Path) -> Result<Outcome> {
    let beta: Vec<f64> = parse_list(beta, "beta")?;
    let grid: Vec<usize> = parse_list(r_grid, "r-grid")?;
    let ds = load_dataset(input)?;
    if beta.len() != ds.n_covariates() {
        return Err(Error::LengthMismatch { expected: ds.n_covariates(), got: beta.len() });
    }
    let mut csv = String::from("cluster_id,K,T,tau,u0,u_prime0_abs,R,rate,gap,quad_rel_err\n");
    for cluster in ds.clusters() {
        let eta = cluster.linear_predictors(&beta);
        let diag = rate_limit_check(&eta, cluster.outcome_sum(), &grid, Some(quadrature_max_r))?;
        let quad = diag.quadrature_vs_dp.unwrap_or_default();
        for ((&r, rate), gap) in diag.r_grid.iter().zip(&diag.exact_rates).zip(&diag.gaps) {
            let q = quad.iter().find(|(qr, _)| *qr == r).map(|(_, e)| fmt_num(*e)).unwrap_or_default();
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                cluster.id(),
                cluster.size(),
                cluster.outcome_sum(),
                fmt_num(diag.tau),
                fmt_num(diag.u0),
                fmt_num(diag.u_prime0_abs),
                r,
                fmt_num(*rate),
                fmt_num(*gap),
                q
            ));
        }
    }
    write_file(out, &csv)?;
    let config = serde_json::json!({ "beta": beta, "r_grid": grid, "quadrature_max_r": quadrature_max_r });
    Ok(Outcome { stdout: None, artifact: Some((out.to_path_buf(), config, None)) })
}

fn dispatch(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Fit { input, method, replications, out, format, tol, max_iter } => {
            cmd_fit(input, *method, *replications, out.as_deref(), *format, *tol, *max_iter)
        }
        Command::Simulate { clusters, cluster_size, n_sims, replications, seed, workers, out, json } => {
            cmd_simulate(*clusters, *cluster_size, *n_sims, replications, *seed, *workers, out, json.as_deref())
        }
        Command::Asymptotics { input, beta, r_grid, quadrature_max_r, out } => {
            cmd_asymptotics(input, beta, r_grid, *quadrature_max_r, out)
        }
        Command::Replay { .. } => Err(Error::InvalidInput("nested replay".into())),
    }
}

/// The recorded command line of a manifest, parsed.
fn load_replay(path: &Path) -> Result<(Vec<String>, Cli)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let recorded: RunManifest = serde_json::from_str(&text).map_err(|e| Error::InvalidInput(format!("manifest: {e}")))?;
    let cli = Cli::try_parse_from(&recorded.command_line).map_err(|e| Error::InvalidInput(e.to_string()))?;
    if matches!(cli.command, Command::Replay { .. }) {
        return Err(Error::InvalidInput("manifest records another replay".into()));
    }
    Ok((recorded.command_line, cli))
}

fn execute(argv: Vec<String>, cli: Cli, stdout: &mut dyn Write) -> Result<()> {
    let (argv, cli) = match &cli.command {
        Command::Replay { manifest } => load_replay(manifest)?,
        _ => (argv, cli),
    };
    let started = Instant::now();
    let outcome = dispatch(&cli)?;
    if let Some(text) = outcome.stdout {
        stdout.write_all(text.as_bytes())?;
    }
    if let Some((path, config, seed)) = outcome.artifact {
        let manifest = RunManifest {
            command_line: argv,
            config,
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            runtime_seconds: started.elapsed().as_secs_f64(),
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        write_file(&manifest_path(&path), &text)?;
    }
    Ok(())
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("CLOGIT_LOG", "error");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

/// Runs the CLI on `argv` (including the program name), writing reports to
/// `stdout` and diagnostics to stderr. Returns the process exit status.
pub fn run_with(argv: &[String], stdout: &mut dyn Write) -> i32 {
    init_logging();
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(argv.to_vec(), cli, stdout) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_INPUT
            }
        }
    }
}

pub fn run(argv: &[String]) -> i32 {
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    run_with(argv, &mut lock)
}
