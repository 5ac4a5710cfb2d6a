use std::path::PathBuf;

use crossmarket::backtest::BacktestError;
use crossmarket::config::ConfigError;
use crossmarket::experiments::ExperimentError;
use crossmarket::market_data::DataError;
use crossmarket::screening::ScreenError;
use crossmarket::synthetic::SyntheticError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    /// A configuration problem found while resolving flags.
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Data { path: PathBuf, source: DataError },
    #[error("input `{role}` at {} differs from the manifest digest", path.display())]
    InputChanged { role: String, path: PathBuf },
    #[error(transparent)]
    Backtest(#[from] BacktestError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    Screen(#[from] ScreenError),
    #[error(transparent)]
    Synthetic(#[from] SyntheticError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub fn csv(path: impl Into<PathBuf>) -> impl FnOnce(csv::Error) -> CliError {
        let path = path.into();
        move |e| CliError::Io { path, source: std::io::Error::other(e) }
    }

    /// Stable error kind for the JSON error record.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) | CliError::Usage(_) => "ConfigError",
            CliError::Data { .. } | CliError::InputChanged { .. } => "DataError",
            CliError::Backtest(e) => backtest_kind(e),
            CliError::Experiment(ExperimentError::Plan(_)) => "PlanError",
            CliError::Experiment(ExperimentError::Data(_)) => "DataError",
            CliError::Experiment(ExperimentError::Backtest(e)) => backtest_kind(e),
            CliError::Experiment(ExperimentError::Io(_)) => "IoError",
            CliError::Experiment(_) => "ExperimentError",
            CliError::Screen(_) => "ScreenError",
            CliError::Synthetic(_) => "ConfigError",
            CliError::Io { .. } => "IoError",
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self.kind(), "message": self.to_string() }).to_string()
    }
}

fn backtest_kind(e: &BacktestError) -> &'static str {
    match e {
        BacktestError::Data(_) => "DataError",
        BacktestError::InvalidConfig(_) => "ConfigError",
        BacktestError::SpanUnavailable(_) => "SpanUnavailable",
        _ => "BacktestError",
    }
}
