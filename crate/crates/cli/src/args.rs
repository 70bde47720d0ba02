use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use simavg::averaging::Method;

#[derive(Debug, Parser)]
#[command(name = "simavg", version, about = "Cross-validation model averaging for single-index models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a candidate set on a training CSV and weigh it.
    Fit(FitArgs),
    /// Predict new rows with a fitted model bundle.
    Predict(PredictArgs),
    /// Run a Monte Carlo experiment grid.
    Simulate(SimulateArgs),
    /// Out-of-sample comparison over a sequence of chronological splits.
    TimeSplit(TimeSplitArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Screen {
    None,
    Correlation,
    LambdaPath,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.trim().parse::<Method>().map_err(|e| e.to_string())
}

/// Candidate construction and estimation settings shared by the commands
/// that fit models on user data.
#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Training CSV: response in the first column, covariates after it.
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated methods.
    #[arg(long, value_parser = parse_method, value_delimiter = ',', default_value = "jcvma,aic,bic,aicc,saic,sbic,saicc,full")]
    pub methods: Vec<Method>,
    /// Observations per cross-validation block.
    #[arg(long, default_value_t = 50)]
    pub block_size: usize,
    /// Bandwidth scales tried by cross-validation.
    #[arg(long, value_delimiter = ',', default_value = "0.5,1,1.5,2,3")]
    pub kappa_grid: Vec<f64>,
    /// Covariates in every candidate (names or 0-based positions); the
    /// first one is the anchor.
    #[arg(long, default_value = "0")]
    pub include: String,
    /// Covariates left out of every candidate.
    #[arg(long, default_value = "")]
    pub exclude: String,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// How candidates are formed.
    #[arg(long, value_enum, default_value_t = Screen::None)]
    pub screen: Screen,
    /// Number of screened covariates for correlation screening.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long, default_value_t = 0.001)]
    pub lambda_min: f64,
    #[arg(long, default_value_t = 0.02)]
    pub lambda_max: f64,
    #[arg(long, default_value_t = 10)]
    pub lambda_count: usize,
    /// Coordinate sweeps allowed per penalized fit.
    #[arg(long, default_value_t = 200)]
    pub max_sweeps: usize,
    /// Proximal-gradient steps before the sweeps of a penalized fit.
    #[arg(long, default_value_t = 500)]
    pub warm_steps: usize,
    /// Recorded in the bundle; fitting itself is deterministic.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    /// Bundle directory written by `fit` (its `model` subdirectory, or the
    /// fit output directory itself).
    #[arg(long)]
    pub model: PathBuf,
    /// CSV with the training covariate names; the response column is optional.
    #[arg(long)]
    pub test: PathBuf,
    /// Methods to report; defaults to those stored in the bundle.
    #[arg(long, value_parser = parse_method, value_delimiter = ',')]
    pub methods: Option<Vec<Method>>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// TOML experiment description.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    pub config: Option<PathBuf>,
    /// Built-in experiment: smoke, loss-trend, weight-trend, p-gt-n.
    #[arg(long)]
    pub preset: Option<String>,
    /// Overrides the replication count of the experiment.
    #[arg(long)]
    pub replications: Option<usize>,
    /// Overrides the seed of the experiment.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct TimeSplitArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Training fractions; each split trains on the leading rows.
    #[arg(long, value_delimiter = ',', default_value = "0.6,0.65,0.7,0.75,0.8,0.85")]
    pub fractions: Vec<f64>,
    #[arg(long)]
    pub out: PathBuf,
}
