use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mbivs::model::ScenarioId;

mod commands;
mod manifest;

#[derive(Parser, Debug)]
#[command(name = "mbivs", version, about = "Multivariate Bayesian indicator variable selection")]
pub struct Cli {
    /// Worker threads for chains, replicates and permutations; 0 uses every core.
    #[arg(long, global = true, env = "MBIVS_THREADS", default_value_t = 0)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate a dataset from a built-in scenario or a custom JSON spec.
    Simulate(SimulateArgs),
    /// Run Gibbs chains on a dataset directory.
    Fit(FitArgs),
    /// PIPs, BFDR selection and best response subsets from saved draws.
    Infer(InferArgs),
    /// Repeated simulate, fit, infer and score.
    Bench(BenchArgs),
    /// Run a built-in validation suite.
    Validate(ValidateArgs),
    /// Re-run the command recorded in a manifest.json.
    Replay(ReplayArgs),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long, required_unless_present = "spec", conflicts_with = "spec")]
    pub scenario: Option<ScenarioId>,
    /// ScenarioSpec JSON file.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Override every nonzero true coefficient with this value.
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 7500)]
    pub iterations: usize,
    #[arg(long, default_value_t = 2500)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 1)]
    pub thin: usize,
    #[arg(long, default_value_t = 1)]
    pub chains: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// 0/1 annotation column; enables the probit annotation prior.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Prior mean of the annotation coefficients.
    #[arg(long, allow_hyphen_values = true)]
    pub mu_d: Option<f64>,
    /// PriorConfig JSON file.
    #[arg(long)]
    pub priors: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[arg(long)]
    pub samples: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    /// Permutations for the best-subset search; 0 skips it.
    #[arg(long, default_value_t = 1000)]
    pub permutations: usize,
    /// Smallest subset PIP allowed to compete for the best subset.
    #[arg(long, default_value_t = mbivs::inference::DEFAULT_MIN_SUBSET_PIP)]
    pub min_subset_pip: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    pub scenario: ScenarioId,
    #[arg(long, default_value_t = 20)]
    pub replicates: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 3000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 1000)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 1)]
    pub thin: usize,
    #[arg(long, default_value_t = 1)]
    pub chains: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0)]
    pub permutations: usize,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub priors: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Oracle,
    Geweke,
    Distributions,
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    #[arg(long, value_enum)]
    pub suite: Suite,
    /// Draws per simulator (Geweke) or per family (distributions).
    #[arg(long)]
    pub draws: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Directory for the suite's CSV report and manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Write to this directory instead of the recorded one.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { commands::EXIT_USAGE } else { 0 });
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
