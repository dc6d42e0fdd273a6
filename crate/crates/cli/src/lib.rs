//! The `mafn` command line: synthesize, cluster, train, evaluate, forecast.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use mafn_core::MafnError;

pub mod commands;
pub mod output;
pub mod plot;

#[derive(Debug, Parser)]
#[command(
    name = "mafn",
    version,
    about = "Multi-head attention fusion network for RUL prognostics"
)]
#[command(after_help = "Config keys can be overridden with MAFN_<KEY> environment variables, e.g. MAFN_MAX_EPOCHS=5.")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic run-to-failure dataset with known ground truth.
    Synthesize {
        /// TOML generator spec; defaults are used for missing keys.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Cluster operating settings into states.
    Cluster {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Number of clusters; overrides `num_states`.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Preprocess, train and write a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Ignore and do not write the window cache.
        #[arg(long)]
        no_cache: bool,
    },
    /// Score a RUL estimator on truncated runs or a test set.
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Cutoffs)]
        mode: Mode,
        /// True RUL per test engine (testset mode).
        #[arg(long)]
        rul: Option<PathBuf>,
        #[arg(long, default_value = "mafn")]
        estimator: String,
        /// Prediction of the `constant` estimator; defaults to half the RUL cap.
        #[arg(long)]
        constant_rul: Option<f64>,
    },
    /// Forecast one sensor after a cutoff and plot it against the truth.
    Forecast {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        unit: u32,
        /// Percentage of the run kept as history, in (0, 100).
        #[arg(long, default_value_t = 70.0)]
        cutoff_pct: f64,
        /// 1-based C-MAPSS sensor number.
        #[arg(long, default_value_t = 7)]
        sensor: usize,
        /// Forecast length; defaults to the checkpoint horizon.
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long, default_value = "mafn")]
        forecaster: String,
        /// Supplies the predicted time-to-failure marker.
        #[arg(long, default_value = "mafn")]
        estimator: String,
    },
    /// Inspect or create configuration files.
    Config {
        #[command(subcommand)]
        action: ConfigAction,
    },
}

#[derive(Debug, Subcommand)]
pub enum ConfigAction {
    /// Write the full default config (to stdout without --out).
    Init {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Print the effective config after environment overrides.
    Show {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// Truncate every run at 10%..90% of its length.
    Cutoffs,
    /// Truncated test histories plus a RUL file.
    Testset,
    /// State accuracy, trend monotonicity and forecast error on windows.
    Decomposition,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Cutoffs => "cutoffs",
            Mode::Testset => "testset",
            Mode::Decomposition => "decomposition",
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(MafnError),
}

impl From<MafnError> for CliError {
    fn from(e: MafnError) -> Self {
        CliError::Core(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl CliError {
    /// 1 usage, 2 data or contract, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) => e.exit_code(),
        }
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
