//! Browser demo: synthetic two-market runs driven from a static page.
//!
//! Every export takes plain numbers, runs a small synthetic pipeline and
//! returns a JSON string for the page to draw.

use crossmarket::backtest::{run_backtest, BacktestConfig};
use crossmarket::experiments::{run_cross, RunSettings};
use crossmarket::screening::time_average_biadjacency;
use crossmarket::synthetic::{generate, recovery_metrics, SyntheticMarkets};
use crossmarket::{Method, ModelSpec, PlantedSpec, ReturnKind, ScreenConfig};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const WINDOW: usize = 60;
const DAYS: usize = 260;

/// Demo-scale inputs shared by all three operations.
#[derive(Debug, Clone, Copy)]
pub struct DemoSpec {
    pub n_stocks: usize,
    pub edge_density: f64,
    pub tau: f64,
    pub seed: u64,
}

impl DemoSpec {
    fn markets(&self) -> Result<SyntheticMarkets, String> {
        if !(2..=40).contains(&self.n_stocks) {
            return Err(format!("stock count {} outside 2..=40", self.n_stocks));
        }
        let spec = PlantedSpec { n_source: self.n_stocks, n_target: self.n_stocks, n_dates: DAYS, edge_density: self.edge_density, seed: self.seed, ..Default::default() };
        generate(&spec).map_err(|e| e.to_string())
    }

    /// In-degree stays below half the universe so edge randomization always
    /// has unconnected sources to draw from.
    fn settings(&self, models: Vec<ModelSpec>) -> RunSettings {
        RunSettings {
            screen: ScreenConfig { window_w: WINDOW, threshold_tau: self.tau, max_predictors_n: Some((self.n_stocks / 3).max(1)), ..Default::default() },
            models,
            backtest: BacktestConfig { window_w: WINDOW, seed: self.seed, ..Default::default() },
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Heatmap {
    pub sources: Vec<String>,
    pub targets: Vec<String>,
    /// Time-averaged biadjacency, `targets × sources`.
    pub matrix: Vec<Vec<f64>>,
    /// Planted `(target row, source column)` cells.
    pub planted: Vec<(usize, usize)>,
    pub rebuilds: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

pub fn heatmap(spec: DemoSpec) -> Result<Heatmap, String> {
    let m = spec.markets()?;
    let run = spec.settings(Vec::new());
    let report = run_backtest(&m.source, &m.target, &run.screen, &[], &run.backtest).map_err(|e| e.to_string())?;
    let graphs: Vec<_> = report.rebuilds.iter().filter_map(|r| r.graphs.first().cloned()).collect();
    let avg = time_average_biadjacency(&graphs).map_err(|e| e.to_string())?;
    let first = &graphs[0];
    let planted = m
        .planted
        .iter()
        .filter_map(|e| Some((first.target_tickers.iter().position(|t| *t == e.target)?, first.source_tickers.iter().position(|s| *s == e.source)?)))
        .collect();
    let last = graphs.last().expect("at least one rebuild");
    let rec = recovery_metrics(last, &m.planted);
    Ok(Heatmap {
        sources: first.source_tickers.clone(),
        targets: first.target_tickers.clone(),
        matrix: avg.rows().into_iter().map(|r| r.to_vec()).collect(),
        planted,
        rebuilds: graphs.len(),
        precision: rec.precision,
        recall: rec.recall,
    })
}

#[derive(Debug, Serialize)]
pub struct Curve {
    pub label: String,
    pub cum_pnl: Vec<f64>,
    pub sr: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct PnlCurves {
    pub dates: Vec<String>,
    pub curves: Vec<Curve>,
}

/// Cumulative qr1 PnL per model; `models` is a comma-separated list.
pub fn pnl(spec: DemoSpec, models: &str) -> Result<PnlCurves, String> {
    let specs: Vec<ModelSpec> = models
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.parse::<Method>().map(ModelSpec::default_for).map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    if specs.is_empty() {
        return Err("pick at least one model".into());
    }
    let m = spec.markets()?;
    let run = spec.settings(specs);
    let report = run_backtest(&m.source, &m.target, &run.screen, &run.models, &run.backtest).map_err(|e| e.to_string())?;
    let curves = report
        .model_labels
        .iter()
        .zip(&report.series)
        .map(|(label, qs)| Curve { label: label.clone(), cum_pnl: qs[0].cum_pnl.clone(), sr: qs[0].sr })
        .collect();
    Ok(PnlCurves { dates: report.dates.iter().map(|d| d.to_string()).collect(), curves })
}

#[derive(Debug, Serialize)]
pub struct RandomizationPoint {
    pub fraction: f64,
    pub sr: Option<f64>,
}

/// qr1 SR of a ridge model as growing shares of edges are randomized.
pub fn randomization(spec: DemoSpec, steps: usize) -> Result<Vec<RandomizationPoint>, String> {
    if steps < 2 {
        return Err("need at least two fractions".into());
    }
    let m = spec.markets()?;
    let run = spec.settings(vec![ModelSpec::default_for(Method::Ridge)]);
    (0..steps)
        .map(|k| {
            let fraction = k as f64 / (steps - 1) as f64;
            let r = crossmarket::backtest::Randomization { fraction, seed: spec.seed };
            let report = run_cross(&m.source, &m.target, ReturnKind::PvClCl, 1, Some(r), &run).map_err(|e| e.to_string())?;
            Ok(RandomizationPoint { fraction, sr: report.series[0][0].sr })
        })
        .collect()
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    r.map(|v| serde_json::to_string(&v).expect("demo outputs serialize")).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn graph_heatmap(n_stocks: usize, edge_density: f64, tau: f64, seed: u64) -> Result<String, JsError> {
    to_js(heatmap(DemoSpec { n_stocks, edge_density, tau, seed }))
}

#[wasm_bindgen]
pub fn pnl_curves(n_stocks: usize, edge_density: f64, tau: f64, seed: u64, models: &str) -> Result<String, JsError> {
    to_js(pnl(DemoSpec { n_stocks, edge_density, tau, seed }, models))
}

#[wasm_bindgen]
pub fn randomization_curve(n_stocks: usize, edge_density: f64, tau: f64, seed: u64, steps: usize) -> Result<String, JsError> {
    to_js(randomization(DemoSpec { n_stocks, edge_density, tau, seed }, steps))
}
