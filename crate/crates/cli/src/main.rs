mod commands;
mod config;
mod manifest;

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "rlhmm", version, about = "Reward learning with engaged/lapse hidden states")]
pub struct Cli {
    /// Overrides the seed of the scenario or configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "rlhmm-out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate a dataset from a scenario.
    Simulate(SimulateArgs),
    /// Fit the model by penalized EM.
    Fit(FitArgs),
    /// Score a penalty grid by K-fold cross-validation.
    Cv(CvArgs),
    /// Subject-level bootstrap standard errors and intervals.
    Bootstrap(BootstrapArgs),
    /// Engagement trajectories and window scores from saved posteriors.
    Engage(EngageArgs),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Scenario JSON (a preset with overrides or a full scenario).
    #[arg(long, conflicts_with = "preset")]
    pub scenario: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long)]
    pub horizon: Option<usize>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum Preset {
    Case1,
    Case2,
    Prt,
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Long-format dataset CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Dataset sidecar JSON (default: the CSV path with a .json extension).
    #[arg(long)]
    pub meta: Option<PathBuf>,
    /// Basis JSON (default: basis.json next to the dataset).
    #[arg(long)]
    pub basis: Option<PathBuf>,
    /// Fit configuration JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Sets both penalty weights; accepts `inf`.
    #[arg(long)]
    pub lambda: Option<String>,
    #[arg(long, value_enum)]
    pub model: Option<ModelArg>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum ModelArg {
    Hmm,
    RlOnly,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Args, Debug)]
pub struct CvArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Grid JSON with a `points` list.
    #[arg(long, conflicts_with = "lambdas")]
    pub grid: Option<PathBuf>,
    /// Comma-separated values; the grid is their Cartesian square.
    #[arg(long)]
    pub lambdas: Option<String>,
    /// Use only the diagonal λ₀ = λ₁ of `--lambdas`.
    #[arg(long)]
    pub diagonal: bool,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
}

#[derive(Args, Debug)]
pub struct BootstrapArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, short = 'B', default_value_t = 200)]
    pub replicates: usize,
    /// 1-based transition indices for ζ (default: T/4 and 3T/4).
    #[arg(long)]
    pub targets: Option<String>,
    /// Refit each replicate from the configured starts.
    #[arg(long)]
    pub cold_start: bool,
}

#[derive(Args, Debug)]
pub struct EngageArgs {
    /// Directory holding posteriors.csv from `fit`.
    #[arg(long)]
    pub fit_dir: PathBuf,
    /// Windows such as `1-25;26-50` (default: quartiles).
    #[arg(long)]
    pub windows: Option<String>,
    /// Bootstrap report whose group-rate band is attached.
    #[arg(long)]
    pub bootstrap: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { commands::EXIT_USAGE } else { 0 });
        }
    };
    if let Some(j) = cli.jobs {
        if j == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(commands::EXIT_USAGE);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(commands::EXIT_USAGE);
        }
    }
    match commands::run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
