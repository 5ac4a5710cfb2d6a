//! `crossmarket` command-line driver.
//!
//! Results go to CSV/JSON files under the output directory, logs to stderr.
//! Failures print one JSON object `{"error": kind, "message": text}` on
//! stderr and exit with status 1 (2 for unparseable arguments).

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use crossmarket::experiments::{Direction, ExperimentKind};
use crossmarket::ReturnKind;

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "crossmarket", version, about = "Cross-market graph screening, forecasting and backtests")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Rerun from a manifest.json, ignoring other configuration flags.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Directory holding us.csv and cn.csv when no explicit paths are given.
    #[arg(long, global = true, env = "CROSSMARKET_DATA_DIR")]
    pub data_dir: Option<PathBuf>,
    /// More log output (-v info, -vv debug). RUST_LOG takes precedence.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check price CSVs against the input contract and print a JSON summary.
    Validate(ValidateArgs),
    /// Generate two synthetic markets with planted edges.
    Synth(SynthArgs),
    /// Build the rolling graph schedule and export graph analytics.
    Graph(GraphArgs),
    /// Run the rolling backtest for one direction.
    Backtest(BacktestArgs),
    /// Run an experiment plan.
    Experiment(ExperimentArgs),
    /// Pivot a finished run into plot-ready tables.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// CSV file to check; defaults to the configured US and CN files.
    #[arg(long)]
    pub file: Option<PathBuf>,
    /// Market identifier of `--file`.
    #[arg(long, default_value = "US")]
    pub market: String,
    /// ETF ticker of `--file`; defaults to the market's ETF.
    #[arg(long)]
    pub etf: Option<String>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// TOML generator spec; flags override its values.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub n_source: Option<usize>,
    #[arg(long)]
    pub n_target: Option<usize>,
    #[arg(long)]
    pub n_dates: Option<usize>,
    #[arg(long)]
    pub edge_density: Option<f64>,
    #[arg(long)]
    pub true_lag: Option<usize>,
    #[arg(long)]
    pub shock_coupling: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Data, screening and schedule overrides shared by the run commands.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// US price CSV.
    #[arg(long)]
    pub us: Option<PathBuf>,
    /// CN price CSV.
    #[arg(long)]
    pub cn: Option<PathBuf>,
    #[arg(long)]
    pub us_etf: Option<String>,
    #[arg(long)]
    pub cn_etf: Option<String>,
    /// Keep the top N stocks of each market by mean market cap.
    #[arg(long)]
    pub universe: Option<usize>,
    /// Rank the universe on a trailing window of this many dates.
    #[arg(long)]
    pub universe_trailing: Option<usize>,
    /// us-cn (lag 1) or cn-us (lag 0).
    #[arg(long)]
    pub direction: Option<Direction>,
    /// Source feature returns: pvCLCL or OPCL.
    #[arg(long)]
    pub feature_kind: Option<ReturnKind>,
    /// Source lag; defaults to the direction's lag.
    #[arg(long)]
    pub lag: Option<usize>,
    /// Root seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Training window for screening and models.
    #[arg(long)]
    pub window: Option<usize>,
    /// Edge threshold on |t|.
    #[arg(long)]
    pub tau: Option<f64>,
    /// In-degree cap.
    #[arg(long)]
    pub max_predictors: Option<usize>,
    /// Benjamini-Hochberg level applied after the threshold.
    #[arg(long)]
    pub fdr_q: Option<f64>,
    #[arg(long)]
    pub exclude_self_edges: bool,
    /// Screen and fit on raw, unwinsorized windows.
    #[arg(long)]
    pub no_winsorize: bool,
    #[arg(long)]
    pub retrain_every: Option<usize>,
    #[arg(long)]
    pub span_start: Option<NaiveDate>,
    #[arg(long)]
    pub span_end: Option<NaiveDate>,
    /// Number of prediction dates.
    #[arg(long)]
    pub span_days: Option<usize>,
    /// Per-stock capital cap in dollars.
    #[arg(long)]
    pub position_cap: Option<f64>,
    /// Per-stock capital as a fraction of mdv21.
    #[arg(long)]
    pub bps_of_mdv: Option<f64>,
    /// Comma-separated methods, e.g. OLS,LASSO,XGB; default hyperparameters.
    #[arg(long, value_delimiter = ',')]
    pub models: Option<Vec<String>>,
    /// Output directory; defaults to `<output_dir>/<run hash>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GraphArgs {
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct BacktestArgs {
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// TOML experiment plan; overrides the config's `[experiment]` table.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[arg(long)]
    pub kind: Option<ExperimentKind>,
    #[arg(long, value_delimiter = ',')]
    pub fractions: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub lags: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory written by `backtest` (or one report inside an experiment).
    #[arg(long)]
    pub run: PathBuf,
    /// Where to write the tables; defaults to the run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).target(env_logger::Target::Stderr).init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.render().to_string();
            eprintln!("{}", serde_json::json!({ "error": "ConfigError", "message": message.trim() }));
            return ExitCode::from(2);
        }
    };
    init_logging(cli.verbose);
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}

impl From<rayon::ThreadPoolBuildError> for CliError {
    fn from(e: rayon::ThreadPoolBuildError) -> Self {
        CliError::Usage(format!("cannot start worker pool: {e}"))
    }
}
