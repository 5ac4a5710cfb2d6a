//! Serializable run configuration and reproducibility manifests.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backtest::BacktestConfig;
use crate::experiments::{Direction, ExperimentPlan};
use crate::models::ModelSpec;
use crate::screening::ScreenConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parsing {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataPaths {
    pub us: Option<PathBuf>,
    pub cn: Option<PathBuf>,
    /// ETF tickers; `None` uses the market default.
    pub us_etf: Option<String>,
    pub cn_etf: Option<String>,
    /// Keep the top `n` stocks of each market by mean market cap.
    pub universe_n: Option<usize>,
    /// Rank on the trailing mean over this many dates before the first
    /// prediction date instead of the full-sample mean.
    pub universe_trailing: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data: DataPaths,
    /// Direction of the `graph` and `backtest` commands.
    pub direction: Direction,
    pub screen: ScreenConfig,
    pub backtest: BacktestConfig,
    pub models: Vec<ModelSpec>,
    pub experiment: Option<ExperimentPlan>,
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Worker threads; results do not depend on it.
    pub workers: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataPaths::default(),
            direction: Direction::UsToCn,
            screen: ScreenConfig::default(),
            backtest: BacktestConfig::default(),
            models: ModelSpec::all_defaults(),
            experiment: None,
            output_dir: PathBuf::from("runs"),
            seed: 0,
            workers: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse { path: origin.to_path_buf(), message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::from_toml_str(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run configs serialize")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.screen.validate().map_err(|e| ConfigError::Invalid(format!("screen: {e}")))?;
        self.backtest.validate().map_err(|e| ConfigError::Invalid(format!("backtest: {e}")))?;
        if self.models.is_empty() {
            return Err(ConfigError::Invalid("models: empty list".into()));
        }
        for (k, m) in self.models.iter().enumerate() {
            m.params.validate().map_err(|e| ConfigError::Invalid(format!("models[{k}]: {e}")))?;
        }
        if let Some(p) = &self.experiment {
            p.validate().map_err(|e| ConfigError::Invalid(format!("experiment: {e}")))?;
        }
        if self.data.universe_n == Some(0) || self.data.universe_trailing == Some(0) {
            return Err(ConfigError::Invalid("data: universe sizes must be positive".into()));
        }
        if self.workers == Some(0) {
            return Err(ConfigError::Invalid("workers must be at least 1".into()));
        }
        Ok(())
    }

    /// The config with fields that cannot change results cleared.
    fn canonical(&self) -> RunConfig {
        RunConfig { workers: None, output_dir: PathBuf::new(), ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub role: String,
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to rerun a result exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub crate_version: String,
    pub command: String,
    pub config: RunConfig,
    pub inputs: Vec<InputDigest>,
    pub run_hash: String,
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig, inputs: Vec<InputDigest>) -> Self {
        let config = config.canonical();
        let mut h = Sha256::new();
        h.update(command.as_bytes());
        h.update(serde_json::to_vec(&config).expect("configs serialize"));
        for i in &inputs {
            h.update(i.role.as_bytes());
            h.update(i.sha256.as_bytes());
        }
        let run_hash = hex(&h.finalize())[..16].to_string();
        Self { crate_version: env!("CARGO_PKG_VERSION").to_string(), command: command.to_string(), config, inputs, run_hash }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifests serialize")
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("manifest.json"), self.to_json() + "\n")
    }

    pub fn read(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        serde_json::from_str(&text).map_err(|e| ConfigError::Parse { path: path.to_path_buf(), message: e.to_string() })
    }
}

pub fn sha256_file(path: &Path) -> Result<String, ConfigError> {
    let bytes = fs::read(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    Ok(hex(&Sha256::digest(&bytes)))
}

pub fn digest_input(role: &str, path: &Path) -> Result<InputDigest, ConfigError> {
    Ok(InputDigest { role: role.to_string(), path: path.to_path_buf(), sha256: sha256_file(path)? })
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Method;

    #[test]
    fn toml_roundtrip_with_models() {
        let text = r#"
seed = 7
[screen]
threshold_tau = 2.5
[backtest]
retrain_every = 5
[[models]]
method = "LASSO"
lambda = 0.01
[[models]]
method = "XGB"
max_depth = 3
seed = 4
"#;
        let cfg = RunConfig::from_toml_str(text, Path::new("inline.toml")).unwrap();
        assert_eq!(cfg.models.len(), 2);
        assert_eq!(cfg.models[1].method(), Method::Xgb);
        assert_eq!(cfg.models[1].seed, 4);
        assert_eq!(cfg.screen.threshold_tau, 2.5);
        let back = RunConfig::from_toml_str(&cfg.to_toml(), Path::new("x")).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn errors_name_the_location() {
        let err = RunConfig::from_toml_str("[backtest]\nretrain_every = \"ten\"", Path::new("bad.toml")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bad.toml") && msg.contains("retrain_every"), "{msg}");
        let err = RunConfig::from_toml_str("[backtest]\nretrain_every = 0", Path::new("bad.toml")).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(_)));
    }

    #[test]
    fn hash_ignores_workers_and_output() {
        let a = RunConfig::default();
        let b = RunConfig { workers: Some(8), output_dir: "elsewhere".into(), ..RunConfig::default() };
        assert_eq!(Manifest::new("backtest", &a, vec![]).run_hash, Manifest::new("backtest", &b, vec![]).run_hash);
        let c = RunConfig { seed: 1, ..RunConfig::default() };
        assert_ne!(Manifest::new("backtest", &a, vec![]).run_hash, Manifest::new("backtest", &c, vec![]).run_hash);
    }
}
