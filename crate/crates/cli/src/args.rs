use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use gasnet_core::sim::{NonlinearMethod, PreconditionerStrategy};

#[derive(Debug, Parser)]
#[command(name = "gasnet", version, about = "Transient simulation of gas pipeline networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario and write the time series, iteration log and summary.
    Simulate(RunArgs),
    /// Write the DF order, constraint counts, Jacobian pattern and structure report.
    Analyze(AnalyzeArgs),
    /// Compare Newton and Picard over a grid of inner tolerances and preconditioner strategies.
    Convergence(ConvergenceArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Overrides {
    /// Time step in seconds.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Newton stop tolerance on ‖F‖₂.
    #[arg(long)]
    pub eps0: Option<f64>,
    /// Relative tolerance of the inner Krylov solve.
    #[arg(long = "eps-tol")]
    pub eps_tol: Option<f64>,
    /// frozen, per-step or per-newton.
    #[arg(long)]
    pub precond: Option<PreconditionerStrategy>,
    /// newton or picard.
    #[arg(long)]
    pub method: Option<NonlinearMethod>,
    /// Target mesh width in metres.
    #[arg(long)]
    pub mesh: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub network: PathBuf,
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    #[arg(long, required_unless_present = "random_junctions", conflicts_with = "random_junctions")]
    pub network: Option<PathBuf>,
    /// Optional scenario; without it the Jacobian is taken at a uniform state.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Analyze a generated network with this many junctions instead of a file.
    #[arg(long)]
    pub random_junctions: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Clone, Args)]
pub struct ConvergenceArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Time steps per run.
    #[arg(long, default_value_t = 10)]
    pub steps: usize,
    /// Inner tolerances to compare.
    #[arg(long, value_delimiter = ',', default_values_t = vec![1e-12, 1e-6, 1e-4, 1e-3])]
    pub eps_tol_grid: Vec<f64>,
}
