use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};

mod commands;
mod config;

use config::PipelineConfig;

/// MV-PURE source localization and reconstruction for EEG/MEG.
#[derive(Debug, Parser)]
#[command(name = "mvpure", version, arg_required_else_help = true)]
struct Cli {
    /// Pipeline configuration file (JSON, or TOML with a .toml extension). Flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic scenario directory and simulated epochs
    Simulate(SimulateArgs),
    /// Eigen-spectrum of R N^-1 with the suggested source count and rank
    Spectrum(SpectrumArgs),
    /// Find active sources with a neural activity index
    Localize(LocalizeArgs),
    /// Reconstruct source time series with an LCMV or MV-PURE filter
    Reconstruct(ReconstructArgs),
    /// Run the seeded invariant suite
    Verify(VerifyArgs),
}

/// Where the lead field and covariances come from.
#[derive(Debug, Args, Default, Clone)]
pub struct InputArgs {
    /// Lead-field matrix, m x s (MVPM1 or .csv)
    #[arg(long, value_name = "FILE")]
    pub leadfield: Option<PathBuf>,
    /// Data covariance R (MVPM1 or .csv)
    #[arg(long, value_name = "FILE")]
    pub data_cov: Option<PathBuf>,
    /// Noise covariance N (MVPM1 or .csv)
    #[arg(long, value_name = "FILE")]
    pub noise_cov: Option<PathBuf>,
    /// Scenario directory written by `simulate`
    #[arg(long, value_name = "DIR")]
    pub scenario: Option<PathBuf>,
    /// Epochs tensor (MVPM1 with a .json sidecar)
    #[arg(long, value_name = "FILE")]
    pub epochs: Option<PathBuf>,
    /// Noise window in seconds, e.g. -0.2,0
    #[arg(long, value_parser = parse_window, allow_hyphen_values = true, value_name = "T0,T1")]
    pub noise_window: Option<[f64; 2]>,
    /// Data window in seconds, e.g. 0.05,0.2
    #[arg(long, value_parser = parse_window, allow_hyphen_values = true, value_name = "T0,T1")]
    pub data_window: Option<[f64; 2]>,
}

fn parse_window(s: &str) -> Result<[f64; 2], String> {
    let parts: Vec<&str> = s.split(',').collect();
    let [a, b] = parts[..] else {
        return Err(format!("expected T0,T1 but got '{s}'"));
    };
    let a: f64 = a.trim().parse().map_err(|e| format!("'{a}': {e}"))?;
    let b: f64 = b.trim().parse().map_err(|e| format!("'{b}': {e}"))?;
    if !(a < b) {
        return Err(format!("window start {a} must be before its end {b}"));
    }
    Ok([a, b])
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of channels m
    #[arg(long)]
    pub channels: Option<usize>,
    /// Number of candidate sources s
    #[arg(long)]
    pub candidates: Option<usize>,
    /// Number of active sources; must match the length of --snr
    #[arg(long)]
    pub n_sources: Option<usize>,
    /// Source amplitudes (standard deviations), comma separated
    #[arg(long, value_delimiter = ',')]
    pub snr: Option<Vec<f64>>,
    /// Noise covariance: white or seeded-spd
    #[arg(long)]
    pub noise: Option<String>,
    /// Pairwise source correlation in [0, 1)
    #[arg(long)]
    pub correlation: Option<f64>,
    /// Minimum angle in degrees between true-source lead-field columns
    #[arg(long)]
    pub separation: Option<f64>,
    #[arg(long)]
    pub n_epochs: Option<usize>,
    #[arg(long)]
    pub n_times: Option<usize>,
    #[arg(long)]
    pub sfreq: Option<f64>,
    /// Time of the first sample in seconds
    #[arg(long, allow_hyphen_values = true)]
    pub t0: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Eigenvalues above 1 + this count as sources
    #[arg(long)]
    pub l0_threshold: Option<f64>,
    /// Eigenvalues with lambda - 1 at or above this are kept in the rank
    #[arg(long)]
    pub rank_threshold: Option<f64>,
    /// corrected (lambda - 1 >= threshold) or printed (lambda >= threshold)
    #[arg(long)]
    pub rank_rule: Option<String>,
    /// Diagonal loading applied to both covariances
    #[arg(long)]
    pub reg: Option<f64>,
    /// Output prefix; writes PREFIX.json and PREFIX.csv. Prints JSON when omitted.
    #[arg(long, value_name = "PREFIX")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LocalizeArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// mai, mpz, mai-mvp or mpz-mvp
    #[arg(long)]
    pub index: Option<String>,
    /// Rank of the reduced-rank indices (defaults to the suggested rank)
    #[arg(long)]
    pub rank: Option<usize>,
    /// Number of sources to find (defaults to the spectral estimate)
    #[arg(long)]
    pub n_sources: Option<usize>,
    /// Diagonal loading applied to both covariances
    #[arg(long)]
    pub reg: Option<f64>,
    /// Worker threads, 0 for all available (capped by MVPURE_THREADS)
    #[arg(long)]
    pub threads: Option<usize>,
    /// Keep every candidate's index value in the trace
    #[arg(long)]
    pub record_candidates: bool,
    /// Result JSON file. Prints to stdout when omitted.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Localization result JSON
    #[arg(long, value_name = "FILE")]
    pub sources: Option<PathBuf>,
    /// lcmv-r, lcmv-n, mvp-r or mvp-n
    #[arg(long)]
    pub filter: Option<String>,
    /// Filter rank for mvp-r / mvp-n (defaults to the rank used for localization)
    #[arg(long)]
    pub rank: Option<usize>,
    /// Diagonal loading applied to the data covariance
    #[arg(long)]
    pub reg: Option<f64>,
    /// Write one l x n_times block per epoch instead of filtering the epoch average
    #[arg(long)]
    pub per_epoch: bool,
    /// Output MVPM1 file; a JSON sidecar is written next to it
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Inject a spurious source into the data covariance (negative control)
    #[arg(long)]
    pub break_unbiasedness: bool,
    /// Worker threads, 0 for all available (capped by MVPURE_THREADS)
    #[arg(long)]
    pub threads: Option<usize>,
    /// Also write the report as JSON
    #[arg(long, value_name = "FILE")]
    pub json: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(mvpure::Error),
    Verification(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Verification(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Core(e) if e.is_numerical() => 3,
            CliError::Core(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Verification(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<mvpure::Error> for CliError {
    fn from(e: mvpure::Error) -> Self {
        CliError::Core(e)
    }
}

fn subcommand_name(c: &Command) -> &'static str {
    match c {
        Command::Simulate(_) => "simulate",
        Command::Spectrum(_) => "spectrum",
        Command::Localize(_) => "localize",
        Command::Reconstruct(_) => "reconstruct",
        Command::Verify(_) => "verify",
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = match &cli.config {
        Some(path) => match PipelineConfig::load(path)? {
            Some(cfg) => cfg,
            None => {
                let mut cmd = Cli::command();
                let name = subcommand_name(&cli.command);
                let usage = cmd
                    .find_subcommand_mut(name)
                    .map(|c| c.render_help().to_string())
                    .unwrap_or_default();
                return Err(CliError::Usage(format!(
                    "--config: {} is empty\n\n{usage}",
                    path.display()
                )));
            }
        },
        None => PipelineConfig::default(),
    };
    match cli.command {
        Command::Simulate(a) => commands::simulate(&a, &cfg),
        Command::Spectrum(a) => commands::spectrum(&a, &cfg),
        Command::Localize(a) => commands::localize(&a, &cfg),
        Command::Reconstruct(a) => commands::reconstruct(&a, &cfg),
        Command::Verify(a) => commands::verify(&a, &cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
