//! Rolling train/predict/evaluate loop and its metrics.
//!
//! Every `retrain_every` target trading days the graph is rebuilt and all
//! models are refit on the `window_w` most recent paired dates strictly
//! before the rebuild date. Predictions for the following days use the
//! latest models and the source returns paired with each day.
//!
//! Daily PnL of a set of stocks is `Σ sign(s_i)·r_i·b_i` with
//! `b_i = min(bps_of_mdv · mdv21_i, L)`, and the annualized Sharpe ratio is
//! `mean / std · √252` with the sample standard deviation.

mod engine;
mod export;

use chrono::NaiveDate;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calendar::CalendarError;
use crate::market_data::{DataError, ReturnKind};
use crate::models::ModelSpec;
use crate::screening::{BipartiteGraph, ScreenError};

pub(crate) use engine::session_for;
pub use engine::{run_backtest, run_design, FeatureDesign, Randomization, SourceBlock, TargetData};
pub use export::{series_file_name, write_quantile_csv, write_report, write_summary_csv};

pub const TRADING_DAYS_PER_YEAR: f64 = 252.0;

#[derive(Debug, Error)]
pub enum BacktestError {
    #[error("prediction span unavailable: {0}")]
    SpanUnavailable(String),
    #[error("daily PnL has zero volatility")]
    ZeroVolatility,
    #[error("invalid backtest configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Calendar(#[from] CalendarError),
    #[error(transparent)]
    Screen(#[from] ScreenError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BacktestConfig {
    pub window_w: usize,
    pub retrain_every: usize,
    /// Source lag in source-market trading days.
    pub lag_l: usize,
    /// Return kind of the source features.
    pub feature_kind: ReturnKind,
    /// Fractions for qr1..qrK, strictly decreasing in (0, 1].
    pub quantile_fractions: Vec<f64>,
    /// Per-stock capital cap `L`; `None` uses the target market default.
    pub position_cap: Option<f64>,
    pub bps_of_mdv: f64,
    /// Winsorize model training windows at the 0.5/99.5 percentiles.
    pub winsorize: bool,
    /// First prediction date; `None` starts at the earliest date with a full
    /// training window.
    pub span_start: Option<NaiveDate>,
    /// Last prediction date; `None` runs to the end of the target calendar.
    pub span_end: Option<NaiveDate>,
    /// Truncates the span to its first `span_days` prediction dates.
    pub span_days: Option<usize>,
    /// Keep every rebuild's graphs in the report.
    pub keep_graphs: bool,
    pub seed: u64,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            window_w: 250,
            retrain_every: 10,
            lag_l: 1,
            feature_kind: ReturnKind::PvClCl,
            quantile_fractions: DEFAULT_FRACTIONS.to_vec(),
            position_cap: None,
            bps_of_mdv: 0.001,
            winsorize: true,
            span_start: None,
            span_end: None,
            span_days: None,
            keep_graphs: true,
            seed: 0,
        }
    }
}

pub const DEFAULT_FRACTIONS: [f64; 6] = [1.0, 0.8, 0.6, 0.4, 0.2, 0.1];

impl BacktestConfig {
    pub fn validate(&self) -> Result<(), BacktestError> {
        let bad = |m: String| Err(BacktestError::InvalidConfig(m));
        if self.window_w < 3 {
            return bad(format!("window_w = {} < 3", self.window_w));
        }
        if self.retrain_every == 0 {
            return bad("retrain_every = 0".into());
        }
        if self.quantile_fractions.is_empty() {
            return bad("no quantile fractions".into());
        }
        for (k, f) in self.quantile_fractions.iter().enumerate() {
            if !(*f > 0.0 && *f <= 1.0) {
                return bad(format!("quantile fraction {f} outside (0, 1]"));
            }
            if k > 0 && *f >= self.quantile_fractions[k - 1] {
                return bad("quantile fractions must be strictly decreasing".into());
            }
        }
        if let Some(l) = self.position_cap {
            if !(l > 0.0) {
                return bad(format!("position_cap = {l}"));
            }
        }
        if !(self.bps_of_mdv > 0.0) {
            return bad(format!("bps_of_mdv = {}", self.bps_of_mdv));
        }
        if self.span_days == Some(0) {
            return bad("span_days = 0".into());
        }
        if let (Some(a), Some(b)) = (self.span_start, self.span_end) {
            if a > b {
                return bad(format!("span_start {a} after span_end {b}"));
            }
        }
        Ok(())
    }
}

/// Default capital cap per target market, in that market's currency.
pub fn default_position_cap(market_id: &str) -> f64 {
    match market_id.to_ascii_uppercase().as_str() {
        "CN" => 1_500_000.0,
        _ => 100_000.0,
    }
}

/// `sign(x)` with `sign(0) = 0`; NaN maps to 0.
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `min(bps · mdv, cap)`, or 0 without liquidity history.
pub fn capital(mdv: Option<f64>, bps_of_mdv: f64, cap: f64) -> f64 {
    match mdv {
        Some(v) if v.is_finite() && v > 0.0 => (bps_of_mdv * v).min(cap),
        _ => 0.0,
    }
}

/// `Σ sign(s_i)·r_i·b_i`. Entries with a missing prediction, return or
/// capital contribute 0.
pub fn daily_pnl(predictions: &[f64], realized: &[f64], capital: &[f64]) -> f64 {
    predictions
        .iter()
        .zip(realized)
        .zip(capital)
        .map(|((s, r), b)| {
            let v = sign(*s) * r * b;
            if v.is_finite() {
                v
            } else {
                0.0
            }
        })
        .sum()
}

/// Annualized Sharpe ratio of a daily PnL series.
pub fn sharpe_ratio(pnl: &[f64]) -> Result<f64, BacktestError> {
    if pnl.len() < 2 {
        return Err(BacktestError::ZeroVolatility);
    }
    let mean = crate::stats::mean(pnl);
    let sd = crate::stats::sample_std(pnl);
    if !(sd > 1e-12 * mean.abs()) || sd == 0.0 {
        return Err(BacktestError::ZeroVolatility);
    }
    Ok(mean / sd * TRADING_DAYS_PER_YEAR.sqrt())
}

/// Number of stocks in a portfolio holding `fraction` of `n`, rounded up.
pub fn quantile_size(fraction: f64, n: usize) -> usize {
    if n == 0 {
        return 0;
    }
    ((fraction * n as f64 - 1e-9).ceil() as usize).clamp(1, n)
}

/// Nested portfolios qr1 ⊇ qr2 ⊇ … as index lists into `predictions`.
/// Stocks are ranked by `|s|` descending, ties by ticker ascending; missing
/// predictions are not ranked.
pub fn quantile_portfolios(tickers: &[String], predictions: &[f64], fractions: &[f64]) -> Vec<Vec<usize>> {
    let mut ranked: Vec<usize> = (0..predictions.len()).filter(|&i| predictions[i].is_finite()).collect();
    ranked.sort_by(|&a, &b| predictions[b].abs().total_cmp(&predictions[a].abs()).then_with(|| tickers[a].cmp(&tickers[b])));
    fractions.iter().map(|&f| ranked[..quantile_size(f, ranked.len())].to_vec()).collect()
}

/// Daily and cumulative PnL of one (model, quantile) portfolio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PnlSeries {
    pub daily_pnl: Vec<f64>,
    pub cum_pnl: Vec<f64>,
    /// `None` when the series has zero volatility.
    pub sr: Option<f64>,
}

impl PnlSeries {
    pub fn from_daily(daily_pnl: Vec<f64>) -> Self {
        let mut acc = 0.0;
        let cum_pnl = daily_pnl
            .iter()
            .map(|v| {
                acc += v;
                acc
            })
            .collect();
        let sr = sharpe_ratio(&daily_pnl).ok();
        Self { daily_pnl, cum_pnl, sr }
    }

    pub fn total(&self) -> f64 {
        self.cum_pnl.last().copied().unwrap_or(0.0)
    }
}

/// One stock's contribution on one day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StockRecord {
    pub ticker: String,
    pub prediction: f64,
    pub realized: f64,
    pub capital: f64,
    pub pnl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyResult {
    pub date: NaiveDate,
    pub records: Vec<StockRecord>,
    pub quantile_pnl: Vec<f64>,
}

/// A failed fit at a rebuild.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitFailure {
    pub ticker: String,
    pub model: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RebuildRecord {
    pub date: NaiveDate,
    pub n_edges: usize,
    /// Targets dropped for missing data in the training window.
    pub skipped_targets: Vec<String>,
    /// Targets with no selected predictor.
    pub no_edge_targets: usize,
    /// Design-matrix width per target; 0 without a model.
    pub n_features: Vec<usize>,
    pub fit_failures: Vec<FitFailure>,
    /// Fits that hit an iteration cap.
    pub nonconverged: usize,
    /// One graph per source block; empty unless graphs are kept.
    pub graphs: Vec<BipartiteGraph>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub dates: Vec<NaiveDate>,
    pub target_tickers: Vec<String>,
    pub target_sectors: Vec<Option<String>>,
    pub model_labels: Vec<String>,
    pub models: Vec<ModelSpec>,
    pub quantile_fractions: Vec<f64>,
    /// Per model, `dates × targets`; NaN where no prediction was made.
    pub predictions: Vec<Array2<f64>>,
    /// Realized target excess returns, `dates × targets`.
    pub realized: Array2<f64>,
    /// Capital `b_i` per day and stock.
    pub capital: Array2<f64>,
    /// `series[model][quantile]`.
    pub series: Vec<Vec<PnlSeries>>,
    pub rebuilds: Vec<RebuildRecord>,
    pub config: BacktestConfig,
    /// Wall-clock seconds; excluded from exported artifacts.
    #[serde(skip)]
    pub runtime_secs: f64,
}

impl BacktestReport {
    pub fn model_index(&self, label: &str) -> Option<usize> {
        self.model_labels.iter().position(|l| l == label)
    }

    /// Quantile index sets for one model and day.
    pub fn portfolios(&self, model: usize, day: usize) -> Vec<Vec<usize>> {
        let preds = self.predictions[model].row(day).to_vec();
        quantile_portfolios(&self.target_tickers, &preds, &self.quantile_fractions)
    }

    /// Per-stock PnL inside quantile `q`, `dates × targets` (0 outside the
    /// portfolio).
    pub fn stock_pnl(&self, model: usize, q: usize) -> Array2<f64> {
        let (nd, nt) = self.realized.dim();
        let mut out = Array2::zeros((nd, nt));
        for t in 0..nd {
            let sets = self.portfolios(model, t);
            for &i in &sets[q] {
                let v = sign(self.predictions[model][[t, i]]) * self.realized[[t, i]] * self.capital[[t, i]];
                out[[t, i]] = if v.is_finite() { v } else { 0.0 };
            }
        }
        out
    }

    pub fn daily_result(&self, model: usize, day: usize) -> DailyResult {
        let sets = self.portfolios(model, day);
        let mut records = Vec::new();
        for &i in &sets[0] {
            let s = self.predictions[model][[day, i]];
            let r = self.realized[[day, i]];
            let b = self.capital[[day, i]];
            records.push(StockRecord { ticker: self.target_tickers[i].clone(), prediction: s, realized: r, capital: b, pnl: sign(s) * r * b });
        }
        records.sort_by(|a, b| a.ticker.cmp(&b.ticker));
        let quantile_pnl = self.series[model].iter().map(|s| s.daily_pnl[day]).collect();
        DailyResult { date: self.dates[day], records, quantile_pnl }
    }

    /// SR per (model, quantile), `None` for zero-volatility series.
    pub fn sr_table(&self) -> Vec<Vec<Option<f64>>> {
        self.series.iter().map(|qs| qs.iter().map(|s| s.sr).collect()).collect()
    }

    /// Median SR across models for each quantile, over models with a
    /// defined SR.
    pub fn median_sr(&self) -> Vec<Option<f64>> {
        (0..self.quantile_fractions.len())
            .map(|q| {
                let v: Vec<f64> = self.series.iter().filter_map(|qs| qs[q].sr).collect();
                (!v.is_empty()).then(|| crate::stats::median(&v))
            })
            .collect()
    }

    /// The graphs of every rebuild for source block `block`.
    pub fn graphs(&self, block: usize) -> Vec<&BipartiteGraph> {
        self.rebuilds.iter().filter_map(|r| r.graphs.get(block)).collect()
    }
}

/// Recomputes every PnL series from predictions, realized returns and
/// capital.
pub(crate) fn assemble_series(tickers: &[String], predictions: &[Array2<f64>], realized: &Array2<f64>, capital: &Array2<f64>, fractions: &[f64]) -> Vec<Vec<PnlSeries>> {
    let nd = realized.nrows();
    predictions
        .iter()
        .map(|pm| {
            let mut daily = vec![Vec::with_capacity(nd); fractions.len()];
            for t in 0..nd {
                let preds = pm.row(t).to_vec();
                let sets = quantile_portfolios(tickers, &preds, fractions);
                for (q, set) in sets.iter().enumerate() {
                    let s: Vec<f64> = set.iter().map(|&i| preds[i]).collect();
                    let r: Vec<f64> = set.iter().map(|&i| realized[[t, i]]).collect();
                    let b: Vec<f64> = set.iter().map(|&i| capital[[t, i]]).collect();
                    daily[q].push(daily_pnl(&s, &r, &b));
                }
            }
            daily.into_iter().map(PnlSeries::from_daily).collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pnl_examples() {
        assert_eq!(daily_pnl(&[0.0, 0.0], &[0.01, -0.02], &[1e5, 1e5]), 0.0);
        let b = capital(Some(2e8), 0.001, 1e5);
        assert_eq!(b, 1e5);
        assert!((daily_pnl(&[0.01], &[0.02], &[b]) - 2000.0).abs() < 1e-9);
        let s = [0.3, -0.1, 0.2];
        let r = [0.01, 0.02, -0.03];
        let c = [1.0, 2.0, 3.0];
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        assert_eq!(daily_pnl(&neg, &r, &c), -daily_pnl(&s, &r, &c));
        assert_eq!(capital(None, 0.001, 1e5), 0.0);
    }

    #[test]
    fn sharpe_examples() {
        let alt: Vec<f64> = (0..10).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert_eq!(sharpe_ratio(&alt).unwrap(), 0.0);
        assert!(matches!(sharpe_ratio(&[3.0; 5]), Err(BacktestError::ZeroVolatility)));
        assert!(matches!(sharpe_ratio(&[0.1; 5]), Err(BacktestError::ZeroVolatility)));
        assert!(matches!(sharpe_ratio(&[1.0]), Err(BacktestError::ZeroVolatility)));
        let s = sharpe_ratio(&[1.0, 2.0, 3.0]).unwrap();
        assert!((s - 2.0 * 252f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn quantile_counts_and_ties() {
        let tickers: Vec<String> = (0..10).map(|i| format!("T{i}")).collect();
        let preds: Vec<f64> = (0..10).map(|i| (i as f64 - 4.5) / 10.0).collect();
        let sets = quantile_portfolios(&tickers, &preds, &DEFAULT_FRACTIONS);
        let sizes: Vec<usize> = sets.iter().map(|s| s.len()).collect();
        assert_eq!(sizes, vec![10, 8, 6, 4, 2, 1]);
        let flat = vec![0.5; 10];
        let sets = quantile_portfolios(&tickers, &flat, &DEFAULT_FRACTIONS);
        assert_eq!(sets[3], vec![0, 1, 2, 3]);
        let mut with_nan = preds.clone();
        with_nan[0] = f64::NAN;
        assert_eq!(quantile_portfolios(&tickers, &with_nan, &[1.0])[0].len(), 9);
        assert_eq!(quantile_size(0.6, 10), 6);
        assert_eq!(quantile_size(0.1, 3), 1);
    }

    #[test]
    fn config_validation() {
        assert!(BacktestConfig::default().validate().is_ok());
        let bad = BacktestConfig { quantile_fractions: vec![1.0, 1.0], ..Default::default() };
        assert!(bad.validate().is_err());
        assert!(BacktestConfig { retrain_every: 0, ..Default::default() }.validate().is_err());
    }
}
