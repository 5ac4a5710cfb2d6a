use std::collections::BTreeMap;

use crossmarket::backtest::{BacktestConfig, BacktestError, Randomization};
use crossmarket::experiments::{
    default_grid, etf_shocks, report_sectors, run_combined, run_cross, run_direction, run_hyperparam_grid, run_lag_sweep, run_plan, sector_breakdown, shock_conditional, Direction, ExperimentError,
    ExperimentKind, ExperimentPlan, Markets, RunSettings,
};
use crossmarket::models::{Hyperparams, LassoParams, Method, ModelSpec, XgbParams};
use crossmarket::synthetic::{generate, PlantedSpec};
use crossmarket::{ReturnKind, ScreenConfig};

fn markets(seed: u64, n: usize, days: usize) -> Markets {
    let spec = PlantedSpec { n_source: n, n_target: n, n_dates: days, edge_density: 0.2, sector_count: 3, seed, ..Default::default() };
    let m = generate(&spec).unwrap();
    Markets { us: m.source, cn: m.target }
}

fn settings(models: Vec<ModelSpec>) -> RunSettings {
    RunSettings {
        screen: ScreenConfig { window_w: 60, max_predictors_n: Some(3), ..Default::default() },
        models,
        backtest: BacktestConfig { window_w: 60, ..Default::default() },
    }
}

fn same(a: &[ndarray::Array2<f64>], b: &[ndarray::Array2<f64>]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.dim() == y.dim() && x.iter().zip(y).all(|(u, v)| u.to_bits() == v.to_bits()))
}

fn cheap() -> Vec<ModelSpec> {
    vec![ModelSpec::default_for(Method::Ols), ModelSpec::new(Hyperparams::Xgb(XgbParams { n_estimators: 8, max_depth: 2, ..Default::default() }), 0)]
}

#[test]
fn zero_randomization_is_the_identity() {
    let mk = markets(1, 8, 160);
    let run = settings(cheap());
    let plain = run_cross(&mk.us, &mk.cn, ReturnKind::PvClCl, 1, None, &run).unwrap();
    let zero = run_cross(&mk.us, &mk.cn, ReturnKind::PvClCl, 1, Some(Randomization { fraction: 0.0, seed: 9 }), &run).unwrap();
    assert!(same(&plain.predictions, &zero.predictions));
    assert_eq!(plain.series, zero.series);
    assert_eq!(plain.rebuilds, zero.rebuilds);
}

#[test]
fn full_randomization_keeps_in_degrees() {
    let mk = markets(2, 8, 160);
    let run = settings(cheap());
    let plain = run_cross(&mk.us, &mk.cn, ReturnKind::PvClCl, 1, None, &run).unwrap();
    let rand = run_cross(&mk.us, &mk.cn, ReturnKind::PvClCl, 1, Some(Randomization { fraction: 1.0, seed: 9 }), &run).unwrap();
    for (a, b) in plain.rebuilds.iter().zip(&rand.rebuilds) {
        assert_eq!(a.graphs[0].in_degrees(), b.graphs[0].in_degrees());
        assert!(b.graphs[0].edges.iter().all(|e| e.synthetic));
    }
}

#[test]
fn shock_conditioning_on_all_days_is_unconditional() {
    let mk = markets(3, 8, 160);
    let report = run_direction(&mk, Direction::UsToCn, ReturnKind::PvClCl, &settings(cheap())).unwrap();
    let shocks = etf_shocks(&report, &mk.us, &mk.cn).unwrap();
    assert!(shocks.iter().all(|s| s.is_finite() && *s >= 0.0));
    let table = shock_conditional(&report, &shocks, &[1.0, 0.5, 1.0 / report.dates.len() as f64]).unwrap();
    for (m, qs) in report.series.iter().enumerate() {
        for (q, s) in qs.iter().enumerate() {
            assert_eq!(table.sr[m][q][0], s.sr);
            assert_eq!(table.sr[m][q][2], None, "single-day subset has no SR");
        }
    }
}

#[test]
fn sector_pnl_partitions_the_total() {
    let mk = markets(4, 9, 160);
    let report = run_direction(&mk, Direction::UsToCn, ReturnKind::PvClCl, &settings(cheap())).unwrap();
    let sectors = report_sectors(&report);
    for q in [0, 3] {
        let t = sector_breakdown(&report, 0, q, &sectors).unwrap();
        assert!(t.sectors.len() > 1);
        for d in 0..report.dates.len() {
            let sum: f64 = t.daily.iter().map(|s| s[d]).sum();
            let total = report.series[0][q].daily_pnl[d];
            assert!((sum - total).abs() <= 1e-9 * total.abs().max(1.0), "{sum} vs {total}");
        }
    }
    let one: BTreeMap<String, String> = report.target_tickers.iter().map(|t| (t.clone(), "ALL".to_string())).collect();
    let t = sector_breakdown(&report, 1, 0, &one).unwrap();
    let overall = report.series[1][0].sr.unwrap();
    assert!((t.sr[0].unwrap() - overall).abs() <= 1e-9 * overall.abs().max(1.0));
    let mut missing = sectors.clone();
    missing.remove(&report.target_tickers[0]);
    assert!(matches!(sector_breakdown(&report, 0, 0, &missing), Err(ExperimentError::UnlabeledTicker(_))));
}

#[test]
fn grid_statistics() {
    let mk = markets(5, 4, 110);
    let run = RunSettings { backtest: BacktestConfig { window_w: 60, ..Default::default() }, ..settings(cheap()) };
    let single = vec![ModelSpec::new(Hyperparams::Lasso(LassoParams { lambda: 1e-4, ..Default::default() }), 0)];
    let g = run_hyperparam_grid(&mk, ReturnKind::PvClCl, &single, Some(20), &run).unwrap();
    assert!(g.summary[0].1.iter().all(|(_, sd)| *sd == 0.0 || sd.is_nan()));
    // two penalties large enough to zero every coefficient predict the same
    let twins = vec![
        ModelSpec::new(Hyperparams::Lasso(LassoParams { lambda: 100.0, ..Default::default() }), 0),
        ModelSpec::new(Hyperparams::Lasso(LassoParams { lambda: 1000.0, ..Default::default() }), 0),
    ];
    let g = run_hyperparam_grid(&mk, ReturnKind::PvClCl, &twins, Some(20), &run).unwrap();
    assert_eq!(g.cells[0].sr, g.cells[1].sr);
    let g = run_hyperparam_grid(&mk, ReturnKind::PvClCl, &default_grid(), Some(10), &run).unwrap();
    let t = g.to_table();
    assert_eq!(t.rows.len(), 7);
    assert_eq!(t.header.len(), 1 + 2 * 6);
}

#[test]
fn cn_side_without_edges_reduces_to_us_only() {
    let mk = markets(6, 8, 170);
    let mut run = settings(cheap());
    run.backtest.span_start = Some(mk.cn.dates[100]);
    let us_only = run_cross(&mk.us, &mk.cn, ReturnKind::PvClCl, 1, None, &run).unwrap();
    let off = ScreenConfig { threshold_tau: f64::INFINITY, ..run.screen.clone() };
    let combined = run_combined(&mk, ReturnKind::PvClCl, ReturnKind::PvClCl, &off, &run).unwrap();
    assert_eq!(us_only.dates, combined.dates);
    assert!(same(&us_only.predictions, &combined.predictions));
}

#[test]
fn lag_beyond_history_is_span_unavailable() {
    let mk = markets(7, 4, 100);
    let err = run_lag_sweep(&mk, ReturnKind::PvClCl, &[2, 90], &[0], &settings(cheap())).unwrap_err();
    assert!(matches!(err, ExperimentError::Backtest(BacktestError::SpanUnavailable(_))));
}

#[test]
fn plans_write_their_tables() {
    let mk = markets(8, 8, 120);
    let dir = tempfile::tempdir().unwrap();
    let plan = ExperimentPlan { kind: ExperimentKind::EdgeRandomization, fractions: vec![0.0, 1.0], ..Default::default() };
    let out = run_plan(&plan, &mk, &settings(cheap())).unwrap();
    out.write(dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("edge_randomization.csv")).unwrap();
    assert_eq!(text.lines().count(), 3);
    let plan = ExperimentPlan { kind: ExperimentKind::SectorBreakdown, ..Default::default() };
    let out = run_plan(&plan, &mk, &settings(cheap())).unwrap();
    out.write(dir.path()).unwrap();
    assert!(dir.path().join("sector_breakdown.csv").exists());
    assert!(dir.path().join("US_to_CN_pvCLCL").join("summary.csv").exists());
}
