//! Rolling-window pairwise regression screening.
//!
//! For every ordered pair (source `x`, target `y`) the target's window of
//! returns is regressed on the source's lagged window:
//!
//! ```text
//! β   = Σ(x-x̄)(y-ȳ) / Σ(x-x̄)²
//! α   = ȳ - β x̄
//! SSE = Σ (y - α - β x)²
//! sₑ  = sqrt(SSE / (w - 2))
//! t   = β / (sₑ / sqrt(Σ(x-x̄)²))
//! ```
//!
//! A directed edge `x → y` is kept when `|t| > τ`.

mod analytics;
mod graph;
mod randomize;

pub use analytics::{in_degree_percentiles, sector_block_median_abs, time_average_biadjacency, SectorMatrix};
pub use graph::{build_graph, extract_window, screen_window, window_rows, write_matrix_csv, BipartiteGraph, Edge, ScreenDiagnostics, WindowData};
pub use randomize::randomize_edges;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Sentinel magnitude assigned to perfect fits, where the t-statistic is
/// undefined.
pub const DEGENERATE_T: f64 = 1e9;
/// A fit is perfect when `SSE < DEGENERATE_SSE_RATIO · Σy²`.
pub const DEGENERATE_SSE_RATIO: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScreenError {
    #[error("predictor is constant over the window")]
    ConstantPredictor,
    #[error("perfect linear fit (β = {beta})")]
    DegeneratePerfectFit { beta: f64, alpha: f64 },
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("window of {0} observations is too short (need at least 3)")]
    WindowTooShort(usize),
    #[error("need {needed} paired training dates before {as_of}, found {found}")]
    WindowUnavailable { as_of: chrono::NaiveDate, needed: usize, found: usize },
    #[error("invalid screening configuration: {0}")]
    InvalidConfig(String),
    #[error("graphs do not share ticker sets")]
    TickerSetMismatch,
    #[error("ticker {0} has no sector label")]
    UnlabeledTicker(String),
    #[error("target {target} has {needed} edges to replace but only {available} unconnected sources")]
    InsufficientCandidates { target: String, needed: usize, available: usize },
    #[error("randomization fraction {0} outside [0, 1]")]
    InvalidFraction(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScreenConfig {
    /// Training window length in trading days.
    pub window_w: usize,
    /// Source-market lag in trading days.
    pub lag_l: usize,
    /// Edge threshold on `|t|`.
    pub threshold_tau: f64,
    /// Optional cap on in-degree; keeps the largest `|t|`.
    pub max_predictors_n: Option<usize>,
    /// Optional Benjamini-Hochberg level applied on top of the threshold.
    pub fdr_q: Option<f64>,
    /// Winsorize each window at the 0.5/99.5 percentiles before screening.
    pub winsorize: bool,
    /// Drop edges whose source and target carry the same ticker.
    pub exclude_self_edges: bool,
}

impl Default for ScreenConfig {
    fn default() -> Self {
        Self {
            window_w: 250,
            lag_l: 1,
            threshold_tau: 2.0,
            max_predictors_n: Some(50),
            fdr_q: None,
            winsorize: true,
            exclude_self_edges: false,
        }
    }
}

impl ScreenConfig {
    pub fn validate(&self) -> Result<(), ScreenError> {
        if self.window_w < 3 {
            return Err(ScreenError::InvalidConfig(format!("window_w = {} < 3", self.window_w)));
        }
        if self.threshold_tau.is_nan() || self.threshold_tau <= 0.0 {
            return Err(ScreenError::InvalidConfig(format!("threshold_tau = {} must be > 0", self.threshold_tau)));
        }
        if let Some(q) = self.fdr_q {
            if !(q > 0.0 && q < 1.0) {
                return Err(ScreenError::InvalidConfig(format!("fdr_q = {q} outside (0, 1)")));
            }
        }
        if self.max_predictors_n == Some(0) {
            return Err(ScreenError::InvalidConfig("max_predictors_n = 0".into()));
        }
        Ok(())
    }
}

/// Simple-regression statistics of `y` on `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairStat {
    pub beta: f64,
    pub alpha: f64,
    pub t_beta: f64,
    pub sse: f64,
    pub x_var_sum: f64,
}

/// `Σx²`-relative floor below which a predictor counts as constant.
const CONSTANT_X_RATIO: f64 = 1e-28;

pub fn pair_tstat(x: &[f64], y: &[f64]) -> Result<PairStat, ScreenError> {
    if x.len() != y.len() {
        return Err(ScreenError::LengthMismatch(x.len(), y.len()));
    }
    let w = x.len();
    if w < 3 {
        return Err(ScreenError::WindowTooShort(w));
    }
    let n = w as f64;
    let x_bar = x.iter().sum::<f64>() / n;
    let y_bar = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut x_sq = 0.0;
    let mut y_sq = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        let dx = xi - x_bar;
        sxx += dx * dx;
        sxy += dx * (yi - y_bar);
        x_sq += xi * xi;
        y_sq += yi * yi;
    }
    if sxx == 0.0 || sxx <= CONSTANT_X_RATIO * x_sq {
        return Err(ScreenError::ConstantPredictor);
    }
    let beta = sxy / sxx;
    let alpha = y_bar - beta * x_bar;
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| {
            let r = yi - alpha - beta * xi;
            r * r
        })
        .sum();
    if sse <= DEGENERATE_SSE_RATIO * y_sq {
        if beta != 0.0 {
            return Err(ScreenError::DegeneratePerfectFit { beta, alpha });
        }
        // constant target: no linear evidence either way
        return Ok(PairStat { beta, alpha, t_beta: 0.0, sse, x_var_sum: sxx });
    }
    let s_e = (sse / (n - 2.0)).sqrt();
    let t_beta = beta / (s_e / sxx.sqrt());
    Ok(PairStat { beta, alpha, t_beta, sse, x_var_sum: sxx })
}

/// The t-statistic used for thresholding, mapping perfect fits to the signed
/// sentinel. `None` means the pair cannot carry an edge.
pub fn screening_t(x: &[f64], y: &[f64]) -> Option<(f64, bool)> {
    match pair_tstat(x, y) {
        Ok(s) => Some((s.t_beta, false)),
        Err(ScreenError::DegeneratePerfectFit { beta, .. }) => Some((DEGENERATE_T.copysign(beta), true)),
        Err(_) => None,
    }
}
