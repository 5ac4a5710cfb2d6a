use std::time::Instant;

use chrono::NaiveDate;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{assemble_series, capital, default_position_cap, BacktestConfig, BacktestError, BacktestReport, FitFailure, RebuildRecord};
use crate::calendar::{pair_sessions, Session};
use crate::market_data::{excess_returns, is_missing, mdv21_at, winsorize_in_place, PricePanel, ReturnKind, ReturnPanel, WINSOR_LOWER, WINSOR_UPPER};
use crate::models::{ensemble_from, fit, FittedModel, Method, ModelSpec, TrainSet};
use crate::par::map_indexed;
use crate::rng::SeedStream;
use crate::screening::{extract_window, randomize_edges, screen_window, ScreenConfig, WindowData};

/// In-degree preserving edge replacement applied at every rebuild.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Randomization {
    pub fraction: f64,
    pub seed: u64,
}

/// One market whose lagged returns are screened as predictors.
#[derive(Debug, Clone)]
pub struct SourceBlock {
    pub returns: ReturnPanel,
    pub session: Session,
    pub lag: usize,
    pub screen: ScreenConfig,
    pub randomization: Option<Randomization>,
}

impl SourceBlock {
    /// Excess returns of `kind` with the market ETF removed from the
    /// candidate set.
    pub fn from_prices(prices: &PricePanel, kind: ReturnKind, lag: usize, screen: ScreenConfig) -> Result<Self, BacktestError> {
        let returns = excess_returns(prices, kind)?.without(&[prices.etf_ticker.as_str()]);
        Ok(Self { returns, session: session_for(&prices.market_id)?, lag, screen, randomization: None })
    }
}

/// The market being predicted: prices for sizing, OPCL excess returns as
/// the realized target.
#[derive(Debug, Clone)]
pub struct TargetData {
    pub prices: PricePanel,
    pub returns: ReturnPanel,
    pub session: Session,
}

impl TargetData {
    pub fn from_prices(prices: &PricePanel) -> Result<Self, BacktestError> {
        let returns = excess_returns(prices, ReturnKind::OpCl)?.without(&[prices.etf_ticker.as_str()]);
        Ok(Self { prices: prices.clone(), returns, session: session_for(&prices.market_id)? })
    }
}

#[derive(Debug, Clone)]
pub enum FeatureDesign {
    /// Screened sources from one or more markets; their edges are merged.
    Graph(Vec<SourceBlock>),
    /// Each target's own previous `n_lags` returns from `returns`, which must
    /// share the target's market and tickers.
    OwnLags { returns: ReturnPanel, n_lags: usize },
}

pub(crate) fn session_for(market_id: &str) -> Result<Session, BacktestError> {
    Session::preset(market_id).ok_or_else(|| BacktestError::InvalidConfig(format!("no session times known for market `{market_id}`")))
}

/// Standard single-source backtest with `config.feature_kind` features at
/// lag `config.lag_l`.
pub fn run_backtest(source: &PricePanel, target: &PricePanel, screen: &ScreenConfig, models: &[ModelSpec], config: &BacktestConfig) -> Result<BacktestReport, BacktestError> {
    let block = SourceBlock::from_prices(source, config.feature_kind, config.lag_l, screen.clone())?;
    run_design(&TargetData::from_prices(target)?, &FeatureDesign::Graph(vec![block]), models, config)
}

/// Where an ensemble member comes from: a listed spec or an extra default
/// fit.
enum Member {
    Listed(usize),
    Default(ModelSpec),
}

struct TargetFit {
    /// `(block, column)` for each feature, in design-matrix order.
    features: Vec<(usize, usize)>,
    models: Vec<Option<FittedModel>>,
    failures: Vec<FitFailure>,
    nonconverged: usize,
}

/// Runs the rolling schedule for an arbitrary feature design. With no model
/// specs only the graphs are built.
pub fn run_design(target: &TargetData, design: &FeatureDesign, models: &[ModelSpec], config: &BacktestConfig) -> Result<BacktestReport, BacktestError> {
    let started = Instant::now();
    config.validate()?;
    for spec in models {
        spec.params.validate().map_err(|e| BacktestError::InvalidConfig(e.to_string()))?;
    }
    let dates = &target.returns.dates;
    let t_market = target.returns.market_id.as_str();
    let w = config.window_w;

    let pairings: Vec<Vec<Option<usize>>> = match design {
        FeatureDesign::Graph(blocks) => {
            if blocks.is_empty() {
                return Err(BacktestError::InvalidConfig("graph design without source blocks".into()));
            }
            let mut out = Vec::with_capacity(blocks.len());
            for b in blocks {
                b.screen.validate()?;
                out.push(pair_sessions(dates, target.session, t_market, &b.returns.dates, b.session, &b.returns.market_id, b.lag)?);
            }
            out
        }
        FeatureDesign::OwnLags { returns, n_lags } => {
            if *n_lags == 0 {
                return Err(BacktestError::InvalidConfig("n_lags = 0".into()));
            }
            let p = pair_sessions(dates, target.session, t_market, &returns.dates, target.session, &returns.market_id, 1)?;
            vec![p.into_iter().map(|o| o.filter(|&r| r + 1 >= *n_lags)).collect()]
        }
    };
    let avail: Vec<bool> = (0..dates.len()).map(|t| pairings.iter().all(|p| p[t].is_some())).collect();
    let mut before = vec![0usize; dates.len() + 1];
    for t in 0..dates.len() {
        before[t + 1] = before[t] + avail[t] as usize;
    }

    let t0 = match config.span_start {
        Some(d) => {
            let t0 = dates.partition_point(|x| *x < d);
            if t0 >= dates.len() || before[t0] < w {
                let found = before[t0.min(dates.len())];
                return Err(BacktestError::SpanUnavailable(format!("{found} paired training dates before {d}, need {w}")));
            }
            t0
        }
        None => (0..dates.len())
            .find(|&t| before[t] >= w)
            .ok_or_else(|| BacktestError::SpanUnavailable(format!("only {} paired dates, need {w} before the first prediction", before[dates.len()])))?,
    };
    let mut t1 = match config.span_end {
        Some(d) => dates.partition_point(|x| *x <= d),
        None => dates.len(),
    };
    if let Some(n) = config.span_days {
        t1 = t1.min(t0 + n);
    }
    if t0 >= t1 {
        return Err(BacktestError::SpanUnavailable(format!("empty prediction span starting {}", dates[t0])));
    }
    let n_days = t1 - t0;

    let tickers = target.returns.tickers.clone();
    let n_targets = tickers.len();
    let cap = config.position_cap.unwrap_or_else(|| default_position_cap(&target.prices.market_id));
    let price_cols: Vec<Option<usize>> = tickers.iter().map(|t| target.prices.ticker_index(t)).collect();

    let mut realized = Array2::from_elem((n_days, n_targets), f64::NAN);
    let mut capital_m = Array2::zeros((n_days, n_targets));
    for k in 0..n_days {
        let t = t0 + k;
        let end = target.prices.dates.partition_point(|x| *x < dates[t]);
        for i in 0..n_targets {
            realized[[k, i]] = target.returns.values[[t, i]];
            capital_m[[k, i]] = capital(price_cols[i].and_then(|c| mdv21_at(&target.prices, c, end)), config.bps_of_mdv, cap);
        }
    }

    // ensemble members reuse listed base fits where available
    let needs_members = models.iter().any(|s| s.method().is_ensemble());
    let members: Vec<Member> = if needs_members {
        Method::BASE
            .iter()
            .map(|&m| match models.iter().position(|s| s.method() == m) {
                Some(idx) => Member::Listed(idx),
                None => Member::Default(ModelSpec::default_for(m)),
            })
            .collect()
    } else {
        Vec::new()
    };

    let labels = unique_labels(models);
    let streams = SeedStream::new(config.seed);
    let mut predictions: Vec<Array2<f64>> = vec![Array2::from_elem((n_days, n_targets), f64::NAN); models.len()];
    let mut rebuilds = Vec::new();

    let mut k = 0;
    while k < n_days {
        let t_rebuild = t0 + k;
        let as_of = dates[t_rebuild];
        let rows: Vec<usize> = {
            let mut r: Vec<usize> = (0..t_rebuild).rev().filter(|&t| avail[t]).take(w).collect();
            r.reverse();
            r
        };
        let y_windows = extract_window(&target.returns, &rows, config.winsorize);
        let mut record = RebuildRecord { date: as_of, n_edges: 0, skipped_targets: Vec::new(), no_edge_targets: 0, n_features: vec![0; n_targets], fit_failures: Vec::new(), nonconverged: 0, graphs: Vec::new() };
        for (i, y) in y_windows.iter().enumerate() {
            if y.is_none() {
                record.skipped_targets.push(tickers[i].clone());
            }
        }

        // per-target feature columns over the training window
        let (feature_sets, x_windows): (Vec<Vec<(usize, usize)>>, Vec<Vec<Option<Vec<f64>>>>) = match design {
            FeatureDesign::Graph(blocks) => {
                let mut sets = vec![Vec::new(); n_targets];
                let mut xw = Vec::with_capacity(blocks.len());
                for (b, block) in blocks.iter().enumerate() {
                    let s_rows: Vec<usize> = rows.iter().map(|&t| pairings[b][t].expect("available row")).collect();
                    let screen = ScreenConfig { window_w: w, lag_l: block.lag, ..block.screen.clone() };
                    let screen_src = extract_window(&block.returns, &s_rows, screen.winsorize);
                    let data = WindowData {
                        as_of,
                        source_tickers: block.returns.tickers.clone(),
                        target_tickers: tickers.clone(),
                        targets: if screen.winsorize == config.winsorize { y_windows.clone() } else { extract_window(&target.returns, &rows, screen.winsorize) },
                        sources: screen_src,
                        source_tau: None,
                    };
                    let (mut graph, diag) = screen_window(&data, &screen)?;
                    if !diag.skipped_sources.is_empty() {
                        log::debug!("{as_of}: {} sources skipped for missing data", diag.skipped_sources.len());
                    }
                    if let Some(r) = block.randomization {
                        let seed = SeedStream::new(r.seed).derive(&["randomize", &b.to_string(), &as_of.to_string()]);
                        graph = randomize_edges(&graph, r.fraction, seed)?;
                    }
                    record.n_edges += graph.n_edges();
                    for (i, set) in sets.iter_mut().enumerate() {
                        let mut p = graph.predictors(i);
                        p.sort_unstable();
                        set.extend(p.into_iter().map(|j| (b, j)));
                    }
                    xw.push(if screen.winsorize == config.winsorize { data.sources } else { extract_window(&block.returns, &s_rows, config.winsorize) });
                    if config.keep_graphs {
                        record.graphs.push(graph);
                    }
                }
                (sets, xw)
            }
            FeatureDesign::OwnLags { returns, n_lags } => {
                // feature (lag, column): the column's return `lag + 1` days back
                let p_rows: Vec<usize> = rows.iter().map(|&t| pairings[0][t].expect("available row")).collect();
                let sets = tickers
                    .iter()
                    .map(|t| match returns.ticker_index(t) {
                        Some(c) => (0..*n_lags).map(|lag| (lag, c)).collect(),
                        None => Vec::new(),
                    })
                    .collect();
                let xw = (0..*n_lags)
                    .map(|lag| {
                        (0..returns.tickers.len())
                            .map(|c| finish_column(p_rows.iter().map(|&p| returns.values[[p - lag, c]]).collect(), config.winsorize))
                            .collect()
                    })
                    .collect();
                (sets, xw)
            }
        };

        let fits: Vec<Option<TargetFit>> = map_indexed(n_targets, |i| {
            if models.is_empty() {
                return None;
            }
            let y = y_windows[i].as_ref()?;
            let features = &feature_sets[i];
            if features.is_empty() {
                return None;
            }
            let mut x = Array2::zeros((rows.len(), features.len()));
            let mut ids = Vec::with_capacity(features.len());
            for (c, &(b, j)) in features.iter().enumerate() {
                let col = x_windows[b][j].as_ref()?;
                for (r, v) in col.iter().enumerate() {
                    x[[r, c]] = *v;
                }
                ids.push(feature_id(design, b, j));
            }
            let train = TrainSet { x, y: y.clone(), feature_ids: ids };
            Some(fit_target(&train, models, &members, &streams, &tickers[i], as_of, features.clone()))
        });

        for (i, f) in fits.iter().enumerate() {
            match f {
                Some(tf) => {
                    record.n_features[i] = tf.features.len();
                    record.fit_failures.extend(tf.failures.iter().cloned());
                    record.nonconverged += tf.nonconverged;
                }
                None if y_windows[i].is_some() && feature_sets[i].is_empty() => record.no_edge_targets += 1,
                None => {}
            }
        }

        let k_end = (k + config.retrain_every).min(n_days);
        for day in k..k_end {
            let t = t0 + day;
            for (i, f) in fits.iter().enumerate() {
                let Some(tf) = f else { continue };
                let Some(x) = design_row(design, &pairings, t, &tf.features) else { continue };
                for (m, model) in tf.models.iter().enumerate() {
                    if let Some(model) = model {
                        if let Ok(s) = model.predict(&x) {
                            predictions[m][[day, i]] = s;
                        }
                    }
                }
            }
        }
        log::info!("rebuild {as_of}: {} edges, {} targets without edges, {} skipped", record.n_edges, record.no_edge_targets, record.skipped_targets.len());
        rebuilds.push(record);
        k = k_end;
    }

    let series = assemble_series(&tickers, &predictions, &realized, &capital_m, &config.quantile_fractions);
    let target_sectors = tickers.iter().map(|t| target.prices.sector.get(t).cloned()).collect();
    Ok(BacktestReport {
        dates: dates[t0..t1].to_vec(),
        target_tickers: tickers,
        target_sectors,
        model_labels: labels,
        models: models.to_vec(),
        quantile_fractions: config.quantile_fractions.clone(),
        predictions,
        realized,
        capital: capital_m,
        series,
        rebuilds,
        config: config.clone(),
        runtime_secs: started.elapsed().as_secs_f64(),
    })
}

fn finish_column(mut v: Vec<f64>, winsorize: bool) -> Option<Vec<f64>> {
    if v.iter().any(|x| is_missing(*x)) {
        return None;
    }
    if winsorize && v.len() >= 2 {
        winsorize_in_place(&mut v, WINSOR_LOWER, WINSOR_UPPER).ok()?;
    }
    Some(v)
}

fn feature_id(design: &FeatureDesign, b: usize, j: usize) -> String {
    match design {
        FeatureDesign::Graph(blocks) => format!("{}:{}", blocks[b].returns.market_id, blocks[b].returns.tickers[j]),
        FeatureDesign::OwnLags { returns, .. } => format!("{}:lag{}", returns.tickers[j], b + 1),
    }
}

/// Raw (unwinsorized) feature values for target day `t`.
fn design_row(design: &FeatureDesign, pairings: &[Vec<Option<usize>>], t: usize, features: &[(usize, usize)]) -> Option<Vec<f64>> {
    let mut x = Vec::with_capacity(features.len());
    match design {
        FeatureDesign::Graph(blocks) => {
            for &(b, j) in features {
                let v = blocks[b].returns.values[[pairings[b][t]?, j]];
                if is_missing(v) {
                    return None;
                }
                x.push(v);
            }
        }
        FeatureDesign::OwnLags { returns, .. } => {
            let p = pairings[0][t]?;
            for &(lag, c) in features {
                let v = returns.values[[p - lag, c]];
                if is_missing(v) {
                    return None;
                }
                x.push(v);
            }
        }
    }
    Some(x)
}

fn unique_labels(models: &[ModelSpec]) -> Vec<String> {
    let mut out = Vec::with_capacity(models.len());
    for (k, spec) in models.iter().enumerate() {
        let base = spec.method().label().to_string();
        let dup = models.iter().filter(|s| s.method() == spec.method()).count() > 1;
        out.push(if dup { format!("{base}#{}", models[..k].iter().filter(|s| s.method() == spec.method()).count() + 1) } else { base });
    }
    out
}

fn fit_target(train: &TrainSet, models: &[ModelSpec], members: &[Member], streams: &SeedStream, ticker: &str, as_of: NaiveDate, features: Vec<(usize, usize)>) -> TargetFit {
    let date = as_of.to_string();
    let seeded = |spec: &ModelSpec, tag: &str| spec.clone().with_seed(streams.derive(&[tag, spec.method().label(), ticker, &date, &spec.seed.to_string()]));
    let mut failures = Vec::new();
    let mut nonconverged = 0;
    let mut fitted: Vec<Option<FittedModel>> = Vec::with_capacity(models.len());
    for spec in models {
        if spec.method().is_ensemble() {
            fitted.push(None);
            continue;
        }
        match fit(&seeded(spec, "fit"), train) {
            Ok(m) => {
                nonconverged += !m.diagnostics.converged as usize;
                fitted.push(Some(m));
            }
            Err(e) => {
                failures.push(FitFailure { ticker: ticker.to_string(), model: spec.method().label().to_string(), error: e.to_string() });
                fitted.push(None);
            }
        }
    }
    if !members.is_empty() {
        let mut base: Option<Vec<FittedModel>> = Some(Vec::with_capacity(members.len()));
        for member in members {
            let m = match member {
                Member::Listed(idx) => fitted[*idx].clone(),
                Member::Default(spec) => match fit(&seeded(spec, "member"), train) {
                    Ok(m) => Some(m),
                    Err(e) => {
                        failures.push(FitFailure { ticker: ticker.to_string(), model: spec.method().label().to_string(), error: e.to_string() });
                        None
                    }
                },
            };
            base = match (base, m) {
                (Some(mut v), Some(m)) => {
                    v.push(m);
                    Some(v)
                }
                _ => None,
            };
        }
        for (k, spec) in models.iter().enumerate() {
            if !spec.method().is_ensemble() {
                continue;
            }
            fitted[k] = match &base {
                Some(b) => ensemble_from(spec, b.clone()).ok(),
                None => {
                    failures.push(FitFailure { ticker: ticker.to_string(), model: spec.method().label().to_string(), error: "an ensemble member failed to fit".into() });
                    None
                }
            };
        }
    }
    TargetFit { features, models: fitted, failures, nonconverged }
}
