use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

use config::TrainFlags;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration; exit status 1.
    Usage(String),
    /// Failure while running; exit status 2.
    Runtime(String),
}

impl From<difftensor::Error> for CliError {
    fn from(e: difftensor::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "difftensor", version, about = "Continuous-time tensor decomposition with graph diffusion dynamics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the two-cluster simulation dataset.
    Synth(SynthArgs),
    /// Train a model and write a checkpoint.
    Train(Box<TrainFlags>),
    /// Score a checkpoint on an observation file.
    Eval(EvalArgs),
    /// Predict means and noise variances for query entries.
    Predict(PredictArgs),
    /// Write learned embedding trajectories on a time grid.
    ExportTrajectories(ExportArgs),
    /// Cluster entities by their learned embeddings.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Existing directory receiving train.csv, test.csv and ground_truth.csv.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub entities: usize,
    #[arg(long, default_value_t = 6400)]
    pub num_train: usize,
    #[arg(long, default_value_t = 1600)]
    pub num_test: usize,
    #[arg(long, default_value_t = 5.0)]
    pub time_max: f64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Observations in original units.
    #[arg(long)]
    pub data: PathBuf,
    /// Also write the rmse/nrmse/count summary here.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Write one row per observation with its prediction and residual.
    #[arg(long)]
    pub dump_residuals: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// CSV rows of index columns then time.
    #[arg(long)]
    pub queries: PathBuf,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    pub start: f64,
    /// Grid end; the last training timestamp when omitted.
    #[arg(long)]
    pub end: Option<f64>,
    #[arg(long, default_value_t = 50)]
    pub points: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Comma-separated timestamps; five evenly spaced training times when omitted.
    #[arg(long, value_delimiter = ',')]
    pub times: Vec<f64>,
    /// Largest k tried by the elbow rule.
    #[arg(long, default_value_t = 8)]
    pub k_max: usize,
    /// Use this k instead of the elbow rule.
    #[arg(long)]
    pub k: Option<usize>,
    /// Also cluster whole trajectories sampled at this many grid points.
    #[arg(long)]
    pub grid_points: Option<usize>,
    /// Ground-truth CSV (entity,mode,...,cluster) for purity scores.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory receiving clusters.csv and summary.csv.
    #[arg(long)]
    pub out: PathBuf,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Train(f) => commands::train(config::RunConfig::resolve(*f)?),
        Command::Eval(a) => commands::eval(&a),
        Command::Predict(a) => commands::predict(&a),
        Command::ExportTrajectories(a) => commands::export_trajectories(&a),
        Command::Analyze(a) => commands::analyze(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
