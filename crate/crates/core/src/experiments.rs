//! Directional runs, baselines and sensitivity studies built on the backtest
//! engine.
//!
//! Sensitivity tables aggregate with the median SR across all model specs
//! of a run, per quantile portfolio.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backtest::{
    run_design, sharpe_ratio, write_report, BacktestConfig, BacktestError, BacktestReport, FeatureDesign, Randomization, SourceBlock, TargetData, DEFAULT_FRACTIONS,
};
use crate::calendar::pair_sessions;
use crate::market_data::{compute_returns, excess_returns, DataError, PricePanel, ReturnKind};
use crate::models::{AdaBoostParams, HgbtParams, Hyperparams, LassoParams, Method, ModelSpec, RfParams, RidgeParams, SvrParams, XgbParams};
use crate::screening::ScreenConfig;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Backtest(#[from] BacktestError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("subset `{0}` selects no days")]
    EmptySubset(String),
    #[error("target ticker {0} has no sector label")]
    UnlabeledTicker(String),
    #[error("invalid experiment plan: {0}")]
    Plan(String),
    #[error("writing results: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    #[serde(alias = "CROSS_US_CN")]
    CrossUsCn,
    #[serde(alias = "CROSS_CN_US")]
    CrossCnUs,
    #[serde(alias = "BASELINE_NONGRAPH")]
    BaselineNongraph,
    #[serde(alias = "BASELINE_GRAPH_SAME")]
    BaselineGraphSame,
    #[serde(alias = "EDGE_RANDOMIZATION")]
    EdgeRandomization,
    #[serde(alias = "LAG_SWEEP")]
    LagSweep,
    #[serde(alias = "HYPERPARAM_GRID")]
    HyperparamGrid,
    #[serde(alias = "SHOCK_CONDITIONAL")]
    ShockConditional,
    #[serde(alias = "SECTOR_BREAKDOWN")]
    SectorBreakdown,
    #[serde(alias = "COMBINED_PREDICTORS")]
    CombinedPredictors,
}

impl std::str::FromStr for ExperimentKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase())).map_err(|_| format!("unknown experiment kind `{s}`"))
    }
}

impl std::str::FromStr for Direction {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "us-cn" | "us-to-cn" => Ok(Direction::UsToCn),
            "cn-us" | "cn-to-us" => Ok(Direction::CnToUs),
            _ => Err(format!("unknown direction `{s}` (expected us-cn or cn-us)")),
        }
    }
}

/// Prediction direction between the two markets. US → CN uses the most
/// recent US close (lag 1); CN → US uses the same-date CN close (lag 0).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    #[default]
    UsToCn,
    CnToUs,
}

impl Direction {
    pub fn lag(&self) -> usize {
        match self {
            Direction::UsToCn => 1,
            Direction::CnToUs => 0,
        }
    }

    pub fn source_market(&self) -> &'static str {
        match self {
            Direction::UsToCn => "US",
            Direction::CnToUs => "CN",
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Direction::UsToCn => "US_to_CN",
            Direction::CnToUs => "CN_to_US",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentPlan {
    pub kind: ExperimentKind,
    /// Source feature kind for directional and sensitivity runs.
    pub feature_kind: ReturnKind,
    /// Edge-randomization fractions.
    pub fractions: Vec<f64>,
    /// Lag-sweep lags.
    pub lags: Vec<usize>,
    /// Nested shock-day fractions.
    pub shock_fractions: Vec<f64>,
    /// Grid cells; `None` uses the full default grid.
    pub grid: Option<Vec<ModelSpec>>,
    /// Prediction dates per grid run unless `grid_full_span`.
    pub grid_span_days: usize,
    pub grid_full_span: bool,
    /// Own-lag count for the non-graph baseline.
    pub n_lags: usize,
    pub seeds: Vec<u64>,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::CrossUsCn,
            feature_kind: ReturnKind::PvClCl,
            fractions: vec![0.2, 0.4, 0.6, 0.8, 1.0],
            lags: vec![2, 3, 4, 5],
            shock_fractions: DEFAULT_FRACTIONS.to_vec(),
            grid: None,
            grid_span_days: 250,
            grid_full_span: false,
            n_lags: 25,
            seeds: vec![0],
        }
    }
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::Plan(m.to_string()));
        if self.seeds.is_empty() {
            return bad("seeds must not be empty");
        }
        if self.fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return bad("randomization fractions must lie in [0, 1]");
        }
        if self.kind == ExperimentKind::EdgeRandomization && self.fractions.is_empty() {
            return bad("edge randomization needs at least one fraction");
        }
        if self.kind == ExperimentKind::LagSweep && self.lags.is_empty() {
            return bad("lag sweep needs at least one lag");
        }
        if self.shock_fractions.is_empty() || self.shock_fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return bad("shock fractions must lie in (0, 1]");
        }
        if self.n_lags == 0 || self.grid_span_days == 0 {
            return bad("n_lags and grid_span_days must be positive");
        }
        Ok(())
    }
}

/// The two market panels an experiment draws on.
#[derive(Debug, Clone)]
pub struct Markets {
    pub us: PricePanel,
    pub cn: PricePanel,
}

impl Markets {
    fn pair(&self, direction: Direction) -> (&PricePanel, &PricePanel) {
        match direction {
            Direction::UsToCn => (&self.us, &self.cn),
            Direction::CnToUs => (&self.cn, &self.us),
        }
    }
}

/// Shared run settings for every backtest inside an experiment.
#[derive(Debug, Clone)]
pub struct RunSettings {
    pub screen: ScreenConfig,
    pub models: Vec<ModelSpec>,
    pub backtest: BacktestConfig,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self { screen: ScreenConfig::default(), models: ModelSpec::all_defaults(), backtest: BacktestConfig::default() }
    }
}

fn single_block(source: &PricePanel, target: &PricePanel, kind: ReturnKind, lag: usize, screen: &ScreenConfig) -> Result<(TargetData, SourceBlock), ExperimentError> {
    Ok((TargetData::from_prices(target)?, SourceBlock::from_prices(source, kind, lag, screen.clone())?))
}

pub fn run_direction(markets: &Markets, direction: Direction, feature_kind: ReturnKind, run: &RunSettings) -> Result<BacktestReport, ExperimentError> {
    let (source, target) = markets.pair(direction);
    run_cross(source, target, feature_kind, direction.lag(), None, run)
}

/// One cross-market backtest with an explicit lag and optional edge
/// randomization.
pub fn run_cross(source: &PricePanel, target: &PricePanel, feature_kind: ReturnKind, lag: usize, randomization: Option<Randomization>, run: &RunSettings) -> Result<BacktestReport, ExperimentError> {
    let (target, mut block) = single_block(source, target, feature_kind, lag, &run.screen)?;
    block.randomization = randomization;
    let config = BacktestConfig { lag_l: lag, feature_kind, ..run.backtest.clone() };
    Ok(run_design(&target, &FeatureDesign::Graph(vec![block]), &run.models, &config)?)
}

/// Each target regressed on its own previous `n_lags` returns of
/// `feature_kind`.
pub fn run_baseline_nongraph(target: &PricePanel, feature_kind: ReturnKind, n_lags: usize, run: &RunSettings) -> Result<BacktestReport, ExperimentError> {
    let own = excess_returns(target, feature_kind)?.without(&[target.etf_ticker.as_str()]);
    let design = FeatureDesign::OwnLags { returns: own, n_lags };
    let config = BacktestConfig { lag_l: 1, feature_kind, ..run.backtest.clone() };
    Ok(run_design(&TargetData::from_prices(target)?, &design, &run.models, &config)?)
}

/// Screening within the target market at lag 1. Self-edges follow
/// `run.screen.exclude_self_edges`.
pub fn run_baseline_graph_same(target: &PricePanel, run: &RunSettings) -> Result<BacktestReport, ExperimentError> {
    run_cross(target, target, ReturnKind::PvClCl, 1, None, run)
}

/// One row of a sensitivity sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub seed: u64,
    pub median_sr: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub parameter: String,
    pub rows: Vec<SweepRow>,
    /// The underlying backtests, named `<parameter><value>_seed<seed>`.
    #[serde(skip)]
    pub reports: Vec<(String, BacktestReport)>,
}

impl SweepTable {
    /// Per-value mean over seeds of the per-quantile median SR.
    pub fn by_value(&self) -> Vec<(f64, Vec<Option<f64>>)> {
        let mut values: Vec<f64> = Vec::new();
        for r in &self.rows {
            if !values.contains(&r.value) {
                values.push(r.value);
            }
        }
        values
            .into_iter()
            .map(|v| {
                let rows: Vec<&SweepRow> = self.rows.iter().filter(|r| r.value == v).collect();
                let nq = rows[0].median_sr.len();
                let mean = (0..nq)
                    .map(|q| {
                        let xs: Vec<f64> = rows.iter().filter_map(|r| r.median_sr[q]).collect();
                        (!xs.is_empty()).then(|| crate::stats::mean(&xs))
                    })
                    .collect();
                (v, mean)
            })
            .collect()
    }

    pub fn to_table(&self) -> Table {
        let nq = self.rows.first().map_or(0, |r| r.median_sr.len());
        let mut header = vec![self.parameter.clone(), "seed".to_string()];
        header.extend((1..=nq).map(|q| format!("qr{q}")));
        let rows = self
            .rows
            .iter()
            .map(|r| {
                let mut row = vec![r.value.to_string(), r.seed.to_string()];
                row.extend(r.median_sr.iter().map(fmt_sr));
                row
            })
            .collect();
        Table { header, rows }
    }
}

/// Reruns the US → CN backtest with a fraction of every rebuild's edges
/// replaced by random unconnected sources.
pub fn run_edge_randomization(markets: &Markets, feature_kind: ReturnKind, fractions: &[f64], seeds: &[u64], run: &RunSettings) -> Result<SweepTable, ExperimentError> {
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for &seed in seeds {
        for &fraction in fractions {
            let settings = RunSettings { backtest: BacktestConfig { seed, ..run.backtest.clone() }, ..run.clone() };
            let report = run_cross(&markets.us, &markets.cn, feature_kind, 1, Some(Randomization { fraction, seed }), &settings)?;
            log::info!("randomization fraction {fraction} seed {seed}: median SR {:?}", report.median_sr());
            rows.push(SweepRow { value: fraction, seed, median_sr: report.median_sr() });
            reports.push((format!("fraction{fraction}_seed{seed}"), report));
        }
    }
    Ok(SweepTable { parameter: "fraction".into(), rows, reports })
}

/// Reruns the US → CN backtest at each lag, in screening and prediction.
pub fn run_lag_sweep(markets: &Markets, feature_kind: ReturnKind, lags: &[usize], seeds: &[u64], run: &RunSettings) -> Result<SweepTable, ExperimentError> {
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for &seed in seeds {
        for &lag in lags {
            let settings = RunSettings { backtest: BacktestConfig { seed, ..run.backtest.clone() }, ..run.clone() };
            let report = run_cross(&markets.us, &markets.cn, feature_kind, lag, None, &settings)?;
            rows.push(SweepRow { value: lag as f64, seed, median_sr: report.median_sr() });
            reports.push((format!("lag{lag}_seed{seed}"), report));
        }
    }
    Ok(SweepTable { parameter: "lag".into(), rows, reports })
}

const LAMBDAS: [f64; 8] = [1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0, 1000.0];
const RATES: [f64; 3] = [0.01, 0.1, 0.2];
const ESTIMATORS: [usize; 3] = [50, 100, 300];

/// The default hyperparameter grid: 111 cells over seven methods.
pub fn default_grid() -> Vec<ModelSpec> {
    let mut g = Vec::new();
    let spec = |p| ModelSpec::new(p, 0);
    for lambda in LAMBDAS {
        g.push(spec(Hyperparams::Lasso(LassoParams { lambda, ..Default::default() })));
    }
    for lambda in LAMBDAS {
        g.push(spec(Hyperparams::Ridge(RidgeParams { lambda })));
    }
    for c in [0.1, 1.0, 10.0, 100.0, 1000.0] {
        g.push(spec(Hyperparams::Svr(SvrParams { c, ..Default::default() })));
    }
    for max_depth in [3, 6, 9] {
        for learning_rate in RATES {
            for n_estimators in ESTIMATORS {
                g.push(spec(Hyperparams::Xgb(XgbParams { max_depth, learning_rate, n_estimators, ..Default::default() })));
            }
        }
    }
    for num_leaves in [10, 31, 90] {
        for learning_rate in RATES {
            for n_estimators in ESTIMATORS {
                g.push(spec(Hyperparams::Hgbt(HgbtParams { num_leaves, learning_rate, n_estimators, ..Default::default() })));
            }
        }
    }
    for n_estimators in ESTIMATORS {
        for max_depth in [5, 10, 50] {
            g.push(spec(Hyperparams::Rf(RfParams { n_estimators, max_depth, ..Default::default() })));
        }
    }
    for max_depth in [1, 5, 10] {
        for n_estimators in ESTIMATORS {
            for learning_rate in RATES {
                g.push(spec(Hyperparams::AdaBoost(AdaBoostParams { n_estimators, learning_rate, max_depth })));
            }
        }
    }
    g
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub spec: ModelSpec,
    pub sr: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridTable {
    pub cells: Vec<GridCell>,
    /// Per method, per quantile `(mean, std)` over cells with a defined SR;
    /// the std is the population std so a single cell gives 0.
    pub summary: Vec<(Method, Vec<(f64, f64)>)>,
}

impl GridTable {
    pub fn to_table(&self) -> Table {
        let nq = self.summary.first().map_or(0, |(_, v)| v.len());
        let mut header = vec!["method".to_string()];
        for q in 1..=nq {
            header.push(format!("qr{q}_mean"));
            header.push(format!("qr{q}_std"));
        }
        let rows = self
            .summary
            .iter()
            .map(|(m, v)| {
                let mut row = vec![m.label().to_string()];
                for (mean, sd) in v {
                    row.push(mean.to_string());
                    row.push(sd.to_string());
                }
                row
            })
            .collect();
        Table { header, rows }
    }
}

/// Every grid cell on one shared graph schedule; each cell's fits are
/// independent of the others, so one run equals one run per cell.
pub fn run_hyperparam_grid(markets: &Markets, feature_kind: ReturnKind, grid: &[ModelSpec], span_days: Option<usize>, run: &RunSettings) -> Result<GridTable, ExperimentError> {
    if grid.is_empty() || grid.iter().any(|s| s.method().is_ensemble()) {
        return Err(ExperimentError::Plan("grid must list non-ensemble model specs".into()));
    }
    let settings = RunSettings { models: grid.to_vec(), backtest: BacktestConfig { span_days, keep_graphs: false, ..run.backtest.clone() }, ..run.clone() };
    let report = run_cross(&markets.us, &markets.cn, feature_kind, 1, None, &settings)?;
    let cells: Vec<GridCell> = grid.iter().zip(report.sr_table()).map(|(spec, sr)| GridCell { spec: spec.clone(), sr }).collect();
    let nq = report.quantile_fractions.len();
    let mut summary = Vec::new();
    for m in Method::ALL {
        let of_method: Vec<&GridCell> = cells.iter().filter(|c| c.spec.method() == m).collect();
        if of_method.is_empty() {
            continue;
        }
        let stats = (0..nq)
            .map(|q| {
                let xs: Vec<f64> = of_method.iter().filter_map(|c| c.sr[q]).collect();
                if xs.is_empty() {
                    (f64::NAN, f64::NAN)
                } else {
                    (crate::stats::mean(&xs), crate::stats::population_std(&xs))
                }
            })
            .collect();
        summary.push((m, stats));
    }
    Ok(GridTable { cells, summary })
}

/// `|ETF pvCLCL|` of the source market at the session paired (lag 1) with
/// each report date; NaN without a pairing.
pub fn etf_shocks(report: &BacktestReport, source: &PricePanel, target: &PricePanel) -> Result<Vec<f64>, ExperimentError> {
    let raw = compute_returns(source, ReturnKind::PvClCl)?;
    let etf = raw.column(&source.etf_ticker).ok_or_else(|| DataError::UnknownTicker(source.etf_ticker.clone()))?;
    let s_session = crate::backtest::session_for(&source.market_id)?;
    let t_session = crate::backtest::session_for(&target.market_id)?;
    let pairing = pair_sessions(&report.dates, t_session, &target.market_id, &raw.dates, s_session, &source.market_id, 1).map_err(BacktestError::from)?;
    Ok(pairing.iter().map(|p| p.map_or(f64::NAN, |r| etf[r].abs())).collect())
}

/// Nested subsets of days by descending shock; ties and missing shocks rank
/// by date. The first subset at fraction 1 is every day.
pub fn shock_subsets(shocks: &[f64], fractions: &[f64]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..shocks.len()).collect();
    let key = |i: usize| if shocks[i].is_nan() { f64::NEG_INFINITY } else { shocks[i] };
    order.sort_by(|&a, &b| key(b).total_cmp(&key(a)).then(a.cmp(&b)));
    fractions
        .iter()
        .map(|&f| {
            let mut days = order[..crate::backtest::quantile_size(f, order.len())].to_vec();
            days.sort_unstable();
            days
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShockTable {
    pub shock_fractions: Vec<f64>,
    pub models: Vec<String>,
    /// `sr[model][stock quantile][shock quantile]`.
    pub sr: Vec<Vec<Vec<Option<f64>>>>,
    /// Median over models, `[stock quantile][shock quantile]`.
    pub median: Vec<Vec<Option<f64>>>,
}

impl ShockTable {
    pub fn to_table(&self) -> Table {
        let mut header = vec!["model".to_string(), "quantile".to_string()];
        header.extend((1..=self.shock_fractions.len()).map(|k| format!("shock_qr{k}")));
        let mut rows = Vec::new();
        let named = self.models.iter().cloned().zip(self.sr.iter()).chain(std::iter::once(("MEDIAN".to_string(), &self.median)));
        for (label, per_q) in named {
            for (q, v) in per_q.iter().enumerate() {
                let mut row = vec![label.clone(), format!("qr{}", q + 1)];
                row.extend(v.iter().map(fmt_sr));
                rows.push(row);
            }
        }
        Table { header, rows }
    }
}

/// SR of every (model, stock quantile) series restricted to the shock-day
/// subsets, keeping date order.
pub fn shock_conditional(report: &BacktestReport, shocks: &[f64], shock_fractions: &[f64]) -> Result<ShockTable, ExperimentError> {
    if report.dates.is_empty() {
        return Err(ExperimentError::EmptySubset("report has no days".into()));
    }
    if shocks.len() != report.dates.len() {
        return Err(ExperimentError::Plan(format!("{} shocks for {} report dates", shocks.len(), report.dates.len())));
    }
    let subsets = shock_subsets(shocks, shock_fractions);
    let sr: Vec<Vec<Vec<Option<f64>>>> = report
        .series
        .iter()
        .map(|qs| {
            qs.iter()
                .map(|s| {
                    subsets
                        .iter()
                        .map(|days| {
                            let sub: Vec<f64> = days.iter().map(|&d| s.daily_pnl[d]).collect();
                            sharpe_ratio(&sub).ok()
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let nq = report.quantile_fractions.len();
    let median = (0..nq)
        .map(|q| {
            (0..subsets.len())
                .map(|k| {
                    let xs: Vec<f64> = sr.iter().filter_map(|m| m[q][k]).collect();
                    (!xs.is_empty()).then(|| crate::stats::median(&xs))
                })
                .collect()
        })
        .collect();
    Ok(ShockTable { shock_fractions: shock_fractions.to_vec(), models: report.model_labels.clone(), sr, median })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorTable {
    pub model: String,
    pub quantile: usize,
    pub sectors: Vec<String>,
    /// Per sector daily PnL.
    pub daily: Vec<Vec<f64>>,
    pub sr: Vec<Option<f64>>,
}

impl SectorTable {
    pub fn to_table(&self) -> Table {
        let rows = self
            .sectors
            .iter()
            .zip(&self.sr)
            .zip(&self.daily)
            .map(|((s, sr), d)| vec![self.model.clone(), s.clone(), fmt_sr(sr), d.iter().sum::<f64>().to_string()])
            .collect();
        Table { header: vec!["model".into(), "sector".into(), "sr".into(), "total_pnl".into()], rows }
    }
}

/// Daily PnL of quantile `q` restricted to each target sector.
pub fn sector_breakdown(report: &BacktestReport, model: usize, q: usize, sectors: &BTreeMap<String, String>) -> Result<SectorTable, ExperimentError> {
    let labels: Vec<&String> = report.target_tickers.iter().map(|t| sectors.get(t).ok_or_else(|| ExperimentError::UnlabeledTicker(t.clone()))).collect::<Result<_, _>>()?;
    let mut names: Vec<String> = labels.iter().map(|s| s.to_string()).collect();
    names.sort();
    names.dedup();
    let pnl = report.stock_pnl(model, q);
    let mut daily = vec![vec![0.0; report.dates.len()]; names.len()];
    for (i, label) in labels.iter().enumerate() {
        let k = names.binary_search(label).expect("listed sector");
        for t in 0..report.dates.len() {
            daily[k][t] += pnl[[t, i]];
        }
    }
    let sr = daily.iter().map(|d| sharpe_ratio(d).ok()).collect();
    Ok(SectorTable { model: report.model_labels[model].clone(), quantile: q, sectors: names, daily, sr })
}

/// Sector label map of a report's targets, as stored in the target panel.
pub fn report_sectors(report: &BacktestReport) -> BTreeMap<String, String> {
    report.target_tickers.iter().zip(&report.target_sectors).filter_map(|(t, s)| s.as_ref().map(|s| (t.clone(), s.clone()))).collect()
}

/// US and CN sources screened separately (each at lag 1) and merged, to
/// predict CN targets. `cn_screen` may use `τ = ∞` to drop the CN side.
pub fn run_combined(markets: &Markets, us_kind: ReturnKind, cn_kind: ReturnKind, cn_screen: &ScreenConfig, run: &RunSettings) -> Result<BacktestReport, ExperimentError> {
    let us = SourceBlock::from_prices(&markets.us, us_kind, 1, run.screen.clone())?;
    let cn = SourceBlock::from_prices(&markets.cn, cn_kind, 1, cn_screen.clone())?;
    let config = BacktestConfig { lag_l: 1, feature_kind: us_kind, ..run.backtest.clone() };
    Ok(run_design(&TargetData::from_prices(&markets.cn)?, &FeatureDesign::Graph(vec![us, cn]), &run.models, &config)?)
}

/// The four feature-kind combinations of US and CN sources.
pub fn run_combined_predictors(markets: &Markets, run: &RunSettings) -> Result<Vec<(String, BacktestReport)>, ExperimentError> {
    let mut out = Vec::new();
    for us_kind in [ReturnKind::PvClCl, ReturnKind::OpCl] {
        for cn_kind in [ReturnKind::PvClCl, ReturnKind::OpCl] {
            let report = run_combined(markets, us_kind, cn_kind, &run.screen, run)?;
            out.push((format!("US_{}+CN_{}", us_kind.label(), cn_kind.label()), report));
        }
    }
    Ok(out)
}

/// A plot-ready CSV table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn fmt_sr(v: &Option<f64>) -> String {
    v.map_or_else(|| "NaN".to_string(), |x| x.to_string())
}

/// Reports and tables produced by one plan.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub reports: Vec<(String, BacktestReport)>,
    pub tables: Vec<(String, Table)>,
}

impl ExperimentOutput {
    /// Each report under `<dir>/<name>/`, each table as `<dir>/<name>.csv`.
    pub fn write(&self, dir: &Path) -> Result<(), ExperimentError> {
        fs::create_dir_all(dir)?;
        for (name, report) in &self.reports {
            write_report(report, &dir.join(name))?;
        }
        for (name, table) in &self.tables {
            table.write_csv(fs::File::create(dir.join(format!("{name}.csv")))?).map_err(std::io::Error::other)?;
        }
        Ok(())
    }
}

fn median_table(reports: &[(String, BacktestReport)]) -> Table {
    let nq = reports.first().map_or(0, |(_, r)| r.quantile_fractions.len());
    let mut header = vec!["run".to_string(), "model".to_string()];
    header.extend((1..=nq).map(|q| format!("qr{q}")));
    let mut rows = Vec::new();
    for (name, r) in reports {
        for (m, label) in r.model_labels.iter().enumerate() {
            let mut row = vec![name.clone(), label.clone()];
            row.extend(r.series[m].iter().map(|s| fmt_sr(&s.sr)));
            rows.push(row);
        }
        let mut row = vec![name.clone(), "MEDIAN".to_string()];
        row.extend(r.median_sr().iter().map(fmt_sr));
        rows.push(row);
    }
    Table { header, rows }
}

/// Executes a plan; every output is a pure function of the inputs.
pub fn run_plan(plan: &ExperimentPlan, markets: &Markets, run: &RunSettings) -> Result<ExperimentOutput, ExperimentError> {
    plan.validate()?;
    let kind = plan.feature_kind;
    let seed0 = plan.seeds[0];
    let seeded = RunSettings { backtest: BacktestConfig { seed: seed0, ..run.backtest.clone() }, ..run.clone() };
    let mut reports = Vec::new();
    let mut tables = Vec::new();
    match plan.kind {
        ExperimentKind::CrossUsCn | ExperimentKind::CrossCnUs => {
            let dir = if plan.kind == ExperimentKind::CrossUsCn { Direction::UsToCn } else { Direction::CnToUs };
            for &seed in &plan.seeds {
                let s = RunSettings { backtest: BacktestConfig { seed, ..run.backtest.clone() }, ..run.clone() };
                reports.push((format!("{}_{}_seed{seed}", dir.label(), kind.label()), run_direction(markets, dir, kind, &s)?));
            }
        }
        ExperimentKind::BaselineNongraph => reports.push((format!("nongraph_{}", kind.label()), run_baseline_nongraph(&markets.cn, kind, plan.n_lags, &seeded)?)),
        ExperimentKind::BaselineGraphSame => reports.push(("graph_same_CN".into(), run_baseline_graph_same(&markets.cn, &seeded)?)),
        ExperimentKind::EdgeRandomization | ExperimentKind::LagSweep => {
            let (name, sweep) = if plan.kind == ExperimentKind::EdgeRandomization {
                ("edge_randomization", run_edge_randomization(markets, kind, &plan.fractions, &plan.seeds, run)?)
            } else {
                ("lag_sweep", run_lag_sweep(markets, kind, &plan.lags, &plan.seeds, run)?)
            };
            tables.push((name.into(), sweep.to_table()));
            reports.extend(sweep.reports);
        }
        ExperimentKind::HyperparamGrid => {
            let grid = plan.grid.clone().unwrap_or_else(default_grid);
            let span = (!plan.grid_full_span).then_some(plan.grid_span_days);
            let g = run_hyperparam_grid(markets, kind, &grid, span, &seeded)?;
            let mut cells = Table { header: vec!["method".into(), "spec".into()], rows: Vec::new() };
            let nq = g.cells.first().map_or(0, |c| c.sr.len());
            cells.header.extend((1..=nq).map(|q| format!("qr{q}")));
            for c in &g.cells {
                let mut row = vec![c.spec.method().label().to_string(), serde_json::to_string(&c.spec).expect("specs serialize")];
                row.extend(c.sr.iter().map(fmt_sr));
                cells.rows.push(row);
            }
            tables.push(("grid_summary".into(), g.to_table()));
            tables.push(("grid_cells".into(), cells));
        }
        ExperimentKind::ShockConditional => {
            let report = run_direction(markets, Direction::UsToCn, kind, &seeded)?;
            let shocks = etf_shocks(&report, &markets.us, &markets.cn)?;
            tables.push(("shock_conditional".into(), shock_conditional(&report, &shocks, &plan.shock_fractions)?.to_table()));
            reports.push((format!("US_to_CN_{}", kind.label()), report));
        }
        ExperimentKind::SectorBreakdown => {
            let report = run_direction(markets, Direction::UsToCn, kind, &seeded)?;
            let sectors = markets.cn.sector.clone();
            let mut all = Table { header: Vec::new(), rows: Vec::new() };
            for m in 0..report.model_labels.len() {
                let t = sector_breakdown(&report, m, 0, &sectors)?.to_table();
                all.header = t.header;
                all.rows.extend(t.rows);
            }
            tables.push(("sector_breakdown".into(), all));
            reports.push((format!("US_to_CN_{}", kind.label()), report));
        }
        ExperimentKind::CombinedPredictors => reports.extend(run_combined_predictors(markets, &seeded)?),
    }
    if !reports.is_empty() {
        tables.push(("sr_by_run".into(), median_table(&reports)));
    }
    Ok(ExperimentOutput { reports, tables })
}
