//! `checkprobe`: simulate check-probe experiments, fit their datasets and
//! evaluate the closed-form models.

mod error;
mod fit;
mod model;
mod plot;
mod simulate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use error::CliError;

#[derive(Parser)]
#[command(name = "checkprobe", version, about = "Check-probe spectroscopy simulator and fitter")]
struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte-Carlo protocol and write CSV datasets plus a manifest.
    Simulate(SimulateArgs),
    /// Fit a model to a dataset and write the result as JSON.
    Fit(FitArgs),
    /// Evaluate a closed-form model on a grid and write a CSV curve.
    Model(ModelArgs),
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
pub enum Protocol {
    Dynamics,
    Telegraph,
    Ple,
    TwoLaser,
    Spectroscopy,
    Scanning,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
pub enum PlotFormat {
    Svg,
}

#[derive(Args)]
pub struct SimulateArgs {
    #[arg(value_enum)]
    pub protocol: Protocol,
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also render the main dataset as a plot.
    #[arg(long, value_enum)]
    pub emit_plot: Option<PlotFormat>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
pub enum FitKind {
    Dynamics,
    Spectrum,
    Lzs,
}

#[derive(Args)]
pub struct FitArgs {
    #[arg(value_enum)]
    pub kind: FitKind,
    /// Records or dataset CSV. Repeat to fit several spectra jointly.
    #[arg(long, required = true)]
    pub data: Vec<PathBuf>,
    /// Model name, or a comma-separated list for dynamics.
    #[arg(long)]
    pub model: Option<String>,
    /// Inclusive threshold range `A:B`, applied to records files.
    #[arg(long)]
    pub threshold_range: Option<String>,
    /// Single threshold for records files.
    #[arg(long)]
    pub threshold: Option<u32>,
    /// Fixed parameters, `name=value` in SI units, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub fixed: Vec<String>,
    /// Iteration cap for the optimiser.
    #[arg(long, default_value_t = 200)]
    pub max_iterations: usize,
    /// Homogeneous linewidth for dynamics fits.
    #[arg(long, default_value_t = 36.0)]
    pub gamma_mhz: f64,
    /// Result JSON path; stdout summary only when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ModelArgs {
    #[command(subcommand)]
    pub command: model::ModelCommand,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| CliError::usage(format!("cannot set up {n} threads: {e}")))?;
    }
    match cli.command {
        Command::Simulate(a) => simulate::run(&a),
        Command::Fit(a) => fit::run(&a),
        Command::Model(a) => model::run(&a.command),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
