use crossmarket::backtest::{run_backtest, sharpe_ratio, BacktestConfig, BacktestError, PnlSeries};
use crossmarket::experiments::{run_baseline_nongraph, RunSettings};
use crossmarket::models::{Hyperparams, Method, ModelSpec, XgbParams};
use crossmarket::synthetic::{generate, PlantedSpec, SyntheticMarkets};
use crossmarket::{PricePanel, ReturnKind, ScreenConfig};

fn markets(seed: u64) -> SyntheticMarkets {
    let spec = PlantedSpec { n_source: 8, n_target: 8, n_dates: 200, edge_density: 0.2, seed, ..Default::default() };
    generate(&spec).unwrap()
}

fn cheap_models() -> Vec<ModelSpec> {
    vec![
        ModelSpec::default_for(Method::Ols),
        ModelSpec::default_for(Method::Ridge),
        ModelSpec::new(Hyperparams::Xgb(XgbParams { n_estimators: 10, max_depth: 3, ..Default::default() }), 0),
    ]
}

fn config() -> BacktestConfig {
    BacktestConfig { window_w: 60, ..Default::default() }
}

fn screen() -> ScreenConfig {
    ScreenConfig { window_w: 60, ..Default::default() }
}

#[test]
fn ten_day_span_rebuilds_once() {
    let m = markets(1);
    let cfg = BacktestConfig { span_days: Some(10), ..config() };
    let r = run_backtest(&m.source, &m.target, &screen(), &cheap_models(), &cfg).unwrap();
    assert_eq!(r.dates.len(), 10);
    assert_eq!(r.rebuilds.len(), 1);
    let cfg = BacktestConfig { span_days: Some(25), ..config() };
    let r = run_backtest(&m.source, &m.target, &screen(), &cheap_models(), &cfg).unwrap();
    assert_eq!(r.rebuilds.len(), 3);
    assert_eq!(r.rebuilds[1].date, r.dates[10]);
}

#[test]
fn report_is_internally_consistent() {
    let m = markets(2);
    let r = run_backtest(&m.source, &m.target, &screen(), &cheap_models(), &config()).unwrap();
    assert_eq!(r.series.len(), 3);
    for qs in &r.series {
        assert_eq!(qs.len(), 6);
        for s in qs {
            let mut acc = 0.0;
            for (d, c) in s.daily_pnl.iter().zip(&s.cum_pnl) {
                acc += d;
                assert_eq!(acc, *c);
            }
            match (s.sr, sharpe_ratio(&s.daily_pnl)) {
                (Some(a), Ok(b)) => assert!((a - b).abs() <= 1e-12),
                (None, Err(_)) => {}
                other => panic!("{other:?}"),
            }
        }
    }
    for model in 0..r.model_labels.len() {
        for day in 0..r.dates.len() {
            let sets = r.portfolios(model, day);
            for k in 1..sets.len() {
                assert!(sets[k].iter().all(|i| sets[k - 1].contains(i)));
            }
            let d = r.daily_result(model, day);
            for rec in &d.records {
                assert_eq!(rec.pnl, crossmarket::backtest::sign(rec.prediction) * rec.realized * rec.capital);
            }
        }
    }
}

#[test]
fn planted_signal_is_profitable() {
    let m = markets(3);
    let r = run_backtest(&m.source, &m.target, &screen(), &cheap_models(), &config()).unwrap();
    let sr = r.median_sr()[0].unwrap();
    assert!(sr > 1.0, "median qr1 SR {sr}");
}

#[test]
fn doubling_capital_doubles_pnl_and_keeps_sr() {
    let m = markets(4);
    let cfg = BacktestConfig { position_cap: Some(1e5), ..config() };
    let base = run_backtest(&m.source, &m.target, &screen(), &cheap_models(), &cfg).unwrap();
    let cfg = BacktestConfig { bps_of_mdv: 0.002, position_cap: Some(2e5), ..config() };
    let doubled = run_backtest(&m.source, &m.target, &screen(), &cheap_models(), &cfg).unwrap();
    for (a, b) in base.series.iter().flatten().zip(doubled.series.iter().flatten()) {
        for (x, y) in a.daily_pnl.iter().zip(&b.daily_pnl) {
            assert_eq!(2.0 * x, *y);
        }
        if let (Some(x), Some(y)) = (a.sr, b.sr) {
            assert!((x - y).abs() <= 1e-12, "{x} vs {y}");
        }
    }
}

/// Rescales one day's close; returns and liquidity from that day on change.
fn perturb_close(panel: &PricePanel, day: usize) -> PricePanel {
    let mut p = panel.clone();
    for j in 0..p.tickers.len() {
        p.close[[day, j]] *= 1.05;
    }
    p
}

#[test]
fn predictions_never_see_the_future() {
    let m = markets(5);
    let base = run_backtest(&m.source, &m.target, &screen(), &cheap_models(), &config()).unwrap();
    for k in [3usize, 17, 40] {
        let date = base.dates[k];
        let day = m.target.dates.iter().position(|d| *d == date).unwrap();
        let altered = perturb_close(&m.target, day);
        let r = run_backtest(&m.source, &altered, &screen(), &cheap_models(), &config()).unwrap();
        for (a, b) in base.predictions.iter().zip(&r.predictions) {
            for t in 0..=k {
                for i in 0..a.ncols() {
                    let (x, y) = (a[[t, i]], b[[t, i]]);
                    assert!(x == y || (x.is_nan() && y.is_nan()), "day {t} changed after perturbing day {k}");
                }
            }
        }
    }
}

#[test]
fn infinite_threshold_takes_no_positions() {
    let m = markets(6);
    let s = ScreenConfig { threshold_tau: f64::INFINITY, ..screen() };
    let r = run_backtest(&m.source, &m.target, &s, &cheap_models(), &config()).unwrap();
    assert!(r.predictions.iter().all(|p| p.iter().all(|v| v.is_nan())));
    assert!(r.series.iter().flatten().all(|s| s.daily_pnl.iter().all(|v| *v == 0.0) && s.sr.is_none()));
}

#[test]
fn unavailable_spans_are_errors() {
    let m = markets(7);
    let cfg = BacktestConfig { lag_l: 500, ..config() };
    assert!(matches!(run_backtest(&m.source, &m.target, &screen(), &cheap_models(), &cfg), Err(BacktestError::SpanUnavailable(_))));
    let cfg = BacktestConfig { span_start: Some(m.target.dates[10]), ..config() };
    assert!(matches!(run_backtest(&m.source, &m.target, &screen(), &cheap_models(), &cfg), Err(BacktestError::SpanUnavailable(_))));
    // US closes after the CN open on the same date
    let cfg = BacktestConfig { lag_l: 0, ..config() };
    assert!(matches!(run_backtest(&m.source, &m.target, &screen(), &cheap_models(), &cfg), Err(BacktestError::Calendar(_))));
}

#[test]
fn own_lag_baseline_uses_every_lag() {
    let m = markets(8);
    let run = RunSettings { screen: screen(), models: cheap_models(), backtest: BacktestConfig { span_days: Some(30), ..config() } };
    let r = run_baseline_nongraph(&m.target, ReturnKind::PvClCl, 25, &run).unwrap();
    for rb in &r.rebuilds {
        assert!(rb.n_features.iter().all(|&n| n == 25), "{:?}", rb.n_features);
    }
    assert!(r.predictions[0].iter().any(|v| v.is_finite()));
}

#[test]
fn ensembles_reuse_listed_members() {
    let m = markets(9);
    let mut models = ModelSpec::all_defaults();
    for s in &mut models {
        if let Hyperparams::Xgb(p) = &mut s.params {
            p.n_estimators = 5;
        }
    }
    let cfg = BacktestConfig { span_days: Some(5), ..config() };
    let r = run_backtest(&m.source, &m.target, &screen(), &models, &cfg).unwrap();
    let avg = r.model_index("ENS_AVG").unwrap();
    let med = r.model_index("ENS_MED").unwrap();
    for t in 0..r.dates.len() {
        for i in 0..r.target_tickers.len() {
            let members: Vec<f64> = Method::BASE.iter().map(|b| r.predictions[r.model_index(b.label()).unwrap()][[t, i]]).collect();
            if members.iter().any(|v| v.is_nan()) {
                continue;
            }
            let mean = members.iter().sum::<f64>() / 8.0;
            assert!((r.predictions[avg][[t, i]] - mean).abs() <= 1e-12 * mean.abs().max(1e-3));
            let mut s = members.clone();
            s.sort_by(f64::total_cmp);
            let median = (s[3] + s[4]) / 2.0;
            assert!((r.predictions[med][[t, i]] - median).abs() <= 1e-12 * median.abs().max(1e-3));
        }
    }
}

#[test]
fn pnl_series_prefix_sums() {
    let s = PnlSeries::from_daily(vec![1.0, -2.0, 0.5]);
    assert_eq!(s.cum_pnl, vec![1.0, -1.0, -0.5]);
    assert_eq!(s.total(), -0.5);
}
