use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use selex::experiments::ExportFormat;
use selex::{OptimizerSettings, QuadratureSpec};

/// Estimation for the means of normal populations selected by ranking.
///
/// Exit codes: 0 success, 1 I/O failure, 2 usage or configuration error,
/// 3 quadrature failure, 4 optimizer non-convergence, 5 experiment
/// replicate failure. SELEX_THREADS caps the worker count (0 = one per core).
#[derive(Debug, Parser)]
#[command(name = "selex", version)]
pub struct Cli {
    /// Print a single JSON document on stdout instead of text. [default: off]
    #[arg(long, global = true)]
    pub json: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Probability that independent normals come out in the listed order.
    Prob(ProbArgs),
    /// Estimate the means from one ranked sample of group means.
    Estimate(EstimateArgs),
    /// Simulated MSE of the naive and conditional estimators.
    SimulateMse(MseArgs),
    /// Stratified bootstrap intervals for the ranked means.
    BootstrapCi(BootstrapArgs),
}

pub fn finite(s: &str) -> Result<f64, String> {
    match s.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(_) => Err(format!("`{s}` is not finite")),
        Err(_) => Err(format!("`{s}` is not a number")),
    }
}

#[derive(Debug, Args)]
pub struct QuadratureArgs {
    /// Absolute error tolerance of the integration.
    #[arg(long, default_value_t = 1e-10, allow_hyphen_values = true, value_parser = finite)]
    pub abs_tol: f64,
    /// Relative error tolerance of the integration.
    #[arg(long, default_value_t = 1e-8, allow_hyphen_values = true, value_parser = finite)]
    pub rel_tol: f64,
    /// Integration range half-width, in standard deviations.
    #[arg(long, default_value_t = 8.0, allow_hyphen_values = true, value_parser = finite)]
    pub truncation_radius: f64,
    /// Cap on integration panels before giving up.
    #[arg(long, default_value_t = 20_000)]
    pub max_subdivisions: usize,
}

impl QuadratureArgs {
    pub fn spec(&self) -> QuadratureSpec {
        QuadratureSpec {
            abs_tol: self.abs_tol,
            rel_tol: self.rel_tol,
            truncation_radius: self.truncation_radius,
            max_subdivisions: self.max_subdivisions,
        }
    }
}

#[derive(Debug, Args)]
pub struct OptimizerArgs {
    /// Stop once the projected-gradient norm falls below this.
    #[arg(long, default_value_t = 1e-7, allow_hyphen_values = true, value_parser = finite)]
    pub kkt_tol: f64,
    /// Iteration cap of the general solver.
    #[arg(long, default_value_t = 500)]
    pub max_iterations: usize,
}

impl OptimizerArgs {
    pub fn settings(&self) -> OptimizerSettings {
        OptimizerSettings {
            kkt_tol: self.kkt_tol,
            max_iterations: self.max_iterations,
            ..OptimizerSettings::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct ProbArgs {
    /// Means in the order being tested, e.g. `1,0.5,0`. [default: none, required]
    #[arg(long, required = true, value_delimiter = ',', allow_hyphen_values = true, value_parser = finite)]
    pub means: Vec<f64>,
    /// Common standard deviation.
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true, value_parser = finite)]
    pub sigma: f64,
    /// Estimate by Monte Carlo with this many draws (at least 10000) instead
    /// of integrating. [default: none, integrate]
    #[arg(long)]
    pub mc: Option<usize>,
    /// Seed of the Monte Carlo estimate.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub quadrature: QuadratureArgs,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Observed group means in label order, e.g. `10,9.5,9,0`. [default: none,
    /// required unless --obs-file]
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, value_parser = finite, conflicts_with = "obs_file", required_unless_present = "obs_file")]
    pub obs: Vec<f64>,
    /// Read observations from a file (`-` for stdin); numbers separated by
    /// commas or whitespace, `#` starts a comment. [default: none]
    #[arg(long)]
    pub obs_file: Option<PathBuf>,
    /// Standard deviation of one observed group mean.
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true, value_parser = finite)]
    pub sigma: f64,
    /// Also report ranked estimates, iterations and residual. [default: off]
    #[arg(long)]
    pub diagnostics: bool,
    #[command(flatten)]
    pub quadrature: QuadratureArgs,
    #[command(flatten)]
    pub optimizer: OptimizerArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

impl From<Format> for ExportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => ExportFormat::Csv,
            Format::Json => ExportFormat::Json,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Grid {
    /// Two populations, mu2 = 0 and mu1 from 0 to 5.
    P2,
    /// Three populations at fixed mu3, mu1 >= mu2 from mu3 to 5.
    P3,
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Result file to write. [default: none, required]
    #[arg(long)]
    pub out: PathBuf,
    /// Result file format.
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct MseArgs {
    /// JSON file holding one MSE configuration or an array of them; replaces
    /// the configuration flags below. [default: none]
    #[arg(long, conflicts_with_all = ["mu", "grid"])]
    pub config: Option<PathBuf>,
    /// True means of one configuration. [default: none, required unless --grid
    /// or --config]
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, value_parser = finite, conflicts_with = "grid")]
    pub mu: Vec<f64>,
    /// Sweep a built-in grid of configurations instead of `--mu`. [default:
    /// none]
    #[arg(long, value_enum)]
    pub grid: Option<Grid>,
    /// Grid spacing.
    #[arg(long, default_value_t = 0.5, allow_hyphen_values = true, value_parser = finite)]
    pub step: f64,
    /// Fixed third mean of the p3 grid.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true, value_parser = finite)]
    pub mu3: f64,
    /// Standard deviation of each observation.
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true, value_parser = finite)]
    pub sigma: f64,
    /// Replicates per configuration.
    #[arg(long, default_value_t = 1000)]
    pub reps: usize,
    /// Random seed, shared by every grid configuration.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// 1-based ranks to score (1 = largest) [default: every rank]
    #[arg(long, value_delimiter = ',')]
    pub ranks: Vec<usize>,
    #[command(flatten)]
    pub output: OutputArgs,
    #[command(flatten)]
    pub quadrature: QuadratureArgs,
    #[command(flatten)]
    pub optimizer: OptimizerArgs,
}

#[derive(Debug, Args)]
pub struct BootstrapArgs {
    /// JSON file holding a bootstrap configuration; replaces the
    /// configuration flags below. [default: none]
    #[arg(long, conflicts_with = "mu", required_unless_present = "mu")]
    pub config: Option<PathBuf>,
    /// True means used to simulate the data. [default: none, required unless
    /// --config]
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, value_parser = finite)]
    pub mu: Vec<f64>,
    /// Observations per population.
    #[arg(long, default_value_t = 50)]
    pub n_per_group: usize,
    /// Standard deviation of one observation [default: sqrt(50)]
    #[arg(long, allow_hyphen_values = true, value_parser = finite)]
    pub obs_sd: Option<f64>,
    /// Bootstrap resamples.
    #[arg(long, default_value_t = 9999)]
    pub n_boot: usize,
    /// Confidence level.
    #[arg(long, default_value_t = 0.95, allow_hyphen_values = true, value_parser = finite)]
    pub level: f64,
    /// Random seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub output: OutputArgs,
    #[command(flatten)]
    pub quadrature: QuadratureArgs,
    #[command(flatten)]
    pub optimizer: OptimizerArgs,
}
