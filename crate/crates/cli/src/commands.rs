use std::fs;
use std::path::{Path, PathBuf};

use crossmarket::backtest::{run_backtest, series_file_name, write_report};
use crossmarket::config::{digest_input, ConfigError, InputDigest, Manifest, RunConfig};
use crossmarket::experiments::{run_plan, Direction, ExperimentPlan, Markets, RunSettings};
use crossmarket::market_data::{default_etf, DataError, is_missing, load_price_csv, save_price_csv, select_universe, UniverseMode};
use crossmarket::screening::{in_degree_percentiles, sector_block_median_abs, time_average_biadjacency, write_matrix_csv, BipartiteGraph, ScreenError};
use crossmarket::synthetic::{generate, write_planted_csv, PlantedSpec};
use crossmarket::{Method, ModelSpec, PricePanel};
use serde_json::json;

use crate::error::CliError;
use crate::{BacktestArgs, Cli, Command, ExperimentArgs, GraphArgs, ReportArgs, RunArgs, SynthArgs, ValidateArgs};

pub fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(CliError::Usage("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match &cli.command {
        Command::Validate(a) => validate(cli, a),
        Command::Synth(a) => synth(a),
        Command::Graph(a) => graph(cli, a),
        Command::Backtest(a) => backtest(cli, a),
        Command::Experiment(a) => experiment(cli, a),
        Command::Report(a) => report(a),
    }
}

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

/// A fully resolved run: its config, input digests and output directory.
struct Resolved {
    config: RunConfig,
    manifest: Manifest,
    out: PathBuf,
}

fn base_config(cli: &Cli) -> Result<RunConfig, CliError> {
    Ok(match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    })
}

fn data_path(explicit: &Option<PathBuf>, configured: &Option<PathBuf>, data_dir: &Option<PathBuf>, market: &str) -> Result<PathBuf, CliError> {
    explicit
        .clone()
        .or_else(|| configured.clone())
        .or_else(|| data_dir.as_ref().map(|d| d.join(format!("{}.csv", market.to_ascii_lowercase()))))
        .ok_or_else(|| CliError::Usage(format!("no {market} price file: pass --{}, set data.{} or CROSSMARKET_DATA_DIR", market.to_ascii_lowercase(), market.to_ascii_lowercase())))
}

fn parse_models(names: &[String]) -> Result<Vec<ModelSpec>, CliError> {
    names
        .iter()
        .map(|n| n.parse::<Method>().map(ModelSpec::default_for).map_err(|e| CliError::Usage(format!("--models: {e}"))))
        .collect()
}

fn apply_overrides(cfg: &mut RunConfig, a: &RunArgs, data_dir: &Option<PathBuf>) -> Result<(), CliError> {
    cfg.data.us = Some(data_path(&a.us, &cfg.data.us, data_dir, "US")?);
    cfg.data.cn = Some(data_path(&a.cn, &cfg.data.cn, data_dir, "CN")?);
    if a.us_etf.is_some() {
        cfg.data.us_etf = a.us_etf.clone();
    }
    if a.cn_etf.is_some() {
        cfg.data.cn_etf = a.cn_etf.clone();
    }
    if a.universe.is_some() {
        cfg.data.universe_n = a.universe;
    }
    if a.universe_trailing.is_some() {
        cfg.data.universe_trailing = a.universe_trailing;
    }
    if let Some(d) = a.direction {
        cfg.direction = d;
        cfg.backtest.lag_l = d.lag();
    }
    if let Some(l) = a.lag {
        cfg.backtest.lag_l = l;
    }
    cfg.screen.lag_l = cfg.backtest.lag_l;
    if let Some(k) = a.feature_kind {
        cfg.backtest.feature_kind = k;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(w) = a.window {
        cfg.screen.window_w = w;
        cfg.backtest.window_w = w;
    }
    if let Some(t) = a.tau {
        cfg.screen.threshold_tau = t;
    }
    if a.max_predictors.is_some() {
        cfg.screen.max_predictors_n = a.max_predictors;
    }
    if a.fdr_q.is_some() {
        cfg.screen.fdr_q = a.fdr_q;
    }
    if a.exclude_self_edges {
        cfg.screen.exclude_self_edges = true;
    }
    if a.no_winsorize {
        cfg.screen.winsorize = false;
        cfg.backtest.winsorize = false;
    }
    if let Some(r) = a.retrain_every {
        cfg.backtest.retrain_every = r;
    }
    if a.span_start.is_some() {
        cfg.backtest.span_start = a.span_start;
    }
    if a.span_end.is_some() {
        cfg.backtest.span_end = a.span_end;
    }
    if a.span_days.is_some() {
        cfg.backtest.span_days = a.span_days;
    }
    if a.position_cap.is_some() {
        cfg.backtest.position_cap = a.position_cap;
    }
    if let Some(b) = a.bps_of_mdv {
        cfg.backtest.bps_of_mdv = b;
    }
    if let Some(m) = &a.models {
        cfg.models = parse_models(m)?;
    }
    // the top-level seed is the single root of all randomness
    cfg.backtest.seed = cfg.seed;
    Ok(())
}

fn check_inputs(inputs: &[InputDigest]) -> Result<(), CliError> {
    for i in inputs {
        if digest(&i.role, &i.path)?.sha256 != i.sha256 {
            return Err(CliError::InputChanged { role: i.role.clone(), path: i.path.clone() });
        }
    }
    Ok(())
}

fn digest(role: &str, path: &Path) -> Result<InputDigest, CliError> {
    digest_input(role, path).map_err(|e| match e {
        ConfigError::Io { path, source } => CliError::Data { path, source: DataError::Io(source) },
        other => other.into(),
    })
}

/// Loads the config from `--manifest`, or from `--config` plus flags.
fn resolve(cli: &Cli, command: &str, a: &RunArgs, extra: impl FnOnce(&mut RunConfig) -> Result<(), CliError>) -> Result<Resolved, CliError> {
    let (config, inputs) = match &cli.manifest {
        Some(path) => {
            let m = Manifest::read(path)?;
            if m.command != command {
                return Err(CliError::Usage(format!("{} was written by `{}`, not `{command}`", path.display(), m.command)));
            }
            check_inputs(&m.inputs)?;
            m.config.validate()?;
            (m.config, m.inputs)
        }
        None => {
            let mut cfg = base_config(cli)?;
            apply_overrides(&mut cfg, a, &cli.data_dir)?;
            extra(&mut cfg)?;
            cfg.validate()?;
            let us = cfg.data.us.clone().expect("resolved");
            let cn = cfg.data.cn.clone().expect("resolved");
            let inputs = vec![digest("us", &us)?, digest("cn", &cn)?];
            (cfg, inputs)
        }
    };
    let manifest = Manifest::new(command, &config, inputs);
    let out = match &a.out {
        Some(o) => o.clone(),
        None if config.output_dir.as_os_str().is_empty() => PathBuf::from("runs").join(&manifest.run_hash),
        None => config.output_dir.join(&manifest.run_hash),
    };
    log::info!("{command} run {} -> {}", manifest.run_hash, out.display());
    Ok(Resolved { config, manifest, out })
}

fn load_market(path: &Path, market: &str, etf: &Option<String>) -> Result<PricePanel, CliError> {
    let etf = match etf {
        Some(e) => e.clone(),
        None => default_etf(market).ok_or_else(|| CliError::Usage(format!("no default ETF for market {market}")))?.to_string(),
    };
    load_price_csv(path, market, &etf).map_err(|source| CliError::Data { path: path.to_path_buf(), source })
}

fn restrict_universe(panel: PricePanel, cfg: &RunConfig, path: &Path) -> Result<PricePanel, CliError> {
    let Some(n) = cfg.data.universe_n else { return Ok(panel) };
    let mode = match cfg.data.universe_trailing {
        None => UniverseMode::FullSample,
        Some(window) => {
            let end = cfg.backtest.span_start.unwrap_or_else(|| panel.dates[cfg.backtest.window_w.min(panel.dates.len() - 1)]);
            UniverseMode::Trailing { end, window }
        }
    };
    let data_err = |source| CliError::Data { path: path.to_path_buf(), source };
    let keep = select_universe(&panel, n, mode).map_err(data_err)?;
    panel.subset(&keep).map_err(data_err)
}

fn load_markets(cfg: &RunConfig) -> Result<Markets, CliError> {
    let us_path = cfg.data.us.as_deref().expect("resolved");
    let cn_path = cfg.data.cn.as_deref().expect("resolved");
    let us = restrict_universe(load_market(us_path, "US", &cfg.data.us_etf)?, cfg, us_path)?;
    let cn = restrict_universe(load_market(cn_path, "CN", &cfg.data.cn_etf)?, cfg, cn_path)?;
    Ok(Markets { us, cn })
}

fn oriented(markets: &Markets, direction: Direction) -> (&PricePanel, &PricePanel) {
    match direction {
        Direction::UsToCn => (&markets.us, &markets.cn),
        Direction::CnToUs => (&markets.cn, &markets.us),
    }
}

fn settings(cfg: &RunConfig) -> RunSettings {
    RunSettings { screen: cfg.screen.clone(), models: cfg.models.clone(), backtest: cfg.backtest.clone() }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))
}

fn create_file(path: &Path) -> Result<fs::File, CliError> {
    fs::File::create(path).map_err(CliError::io(path))
}

fn print_json(value: serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(&value).expect("json values serialize"));
}

// ---------------------------------------------------------------------------
// validate
// ---------------------------------------------------------------------------

fn panel_summary(path: &Path, panel: &PricePanel) -> serde_json::Value {
    let stocks = panel.stock_tickers();
    let missing = panel.close.iter().filter(|v| is_missing(**v)).count();
    let mut sectors: Vec<&String> = panel.sector.values().collect();
    sectors.sort();
    sectors.dedup();
    json!({
        "path": path,
        "market": panel.market_id,
        "etf": panel.etf_ticker,
        "n_dates": panel.dates.len(),
        "first_date": panel.dates.first().map(|d| d.to_string()),
        "last_date": panel.dates.last().map(|d| d.to_string()),
        "n_stocks": stocks.len(),
        "n_sectors": sectors.len(),
        "missing_close": missing,
    })
}

fn validate(cli: &Cli, a: &ValidateArgs) -> Result<(), CliError> {
    let files: Vec<(PathBuf, String, Option<String>)> = match &a.file {
        Some(f) => vec![(f.clone(), a.market.to_ascii_uppercase(), a.etf.clone())],
        None => {
            let cfg = base_config(cli)?;
            vec![
                (data_path(&None, &cfg.data.us, &cli.data_dir, "US")?, "US".into(), cfg.data.us_etf.clone()),
                (data_path(&None, &cfg.data.cn, &cli.data_dir, "CN")?, "CN".into(), cfg.data.cn_etf.clone()),
            ]
        }
    };
    let mut out = Vec::new();
    for (path, market, etf) in &files {
        let panel = load_market(path, market, etf)?;
        out.push(panel_summary(path, &panel));
    }
    print_json(serde_json::Value::Array(out));
    Ok(())
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

fn synth(a: &SynthArgs) -> Result<(), CliError> {
    let mut spec = match &a.spec {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(CliError::io(p))?;
            toml::from_str::<PlantedSpec>(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
        }
        None => PlantedSpec::default(),
    };
    macro_rules! set {
        ($($f:ident),*) => {$( if let Some(v) = a.$f { spec.$f = v; } )*};
    }
    set!(n_source, n_target, n_dates, edge_density, true_lag, seed);
    if a.shock_coupling.is_some() {
        spec.shock_coupling = a.shock_coupling;
    }
    let m = generate(&spec)?;
    create_dir(&a.out)?;
    let mut written = Vec::new();
    for panel in [&m.source, &m.target] {
        let path = a.out.join(format!("{}.csv", panel.market_id.to_ascii_lowercase()));
        save_price_csv(panel, &path).map_err(|source| CliError::Data { path: path.clone(), source })?;
        written.push(path);
    }
    let planted = a.out.join("planted.csv");
    write_planted_csv(&m.planted, create_file(&planted)?).map_err(CliError::csv(&planted))?;
    if !m.within_planted.is_empty() {
        let p = a.out.join("within_planted.csv");
        write_planted_csv(&m.within_planted, create_file(&p)?).map_err(CliError::csv(&p))?;
    }
    let spec_path = a.out.join("spec.toml");
    let text = toml::to_string_pretty(&spec).expect("synthetic specs serialize");
    fs::write(&spec_path, text).map_err(CliError::io(&spec_path))?;
    print_json(json!({ "source": written[0], "target": written[1], "planted_edges": m.planted.len(), "spec": spec_path }));
    Ok(())
}

// ---------------------------------------------------------------------------
// graph
// ---------------------------------------------------------------------------

fn graph(cli: &Cli, a: &GraphArgs) -> Result<(), CliError> {
    let r = resolve(cli, "graph", &a.run, |_| Ok(()))?;
    let markets = load_markets(&r.config)?;
    let (source, target) = oriented(&markets, r.config.direction);
    let bt = crossmarket::BacktestConfig { keep_graphs: true, ..r.config.backtest.clone() };
    let report = run_backtest(source, target, &r.config.screen, &[], &bt)?;
    let graphs: Vec<BipartiteGraph> = report.rebuilds.iter().filter_map(|rb| rb.graphs.first().cloned()).collect();
    create_dir(&r.out)?;
    write_graph_outputs(&r.out, &graphs, source, target)?;
    r.manifest.write(&r.out).map_err(CliError::io(&r.out))?;
    print_json(json!({ "out": r.out, "run_hash": r.manifest.run_hash, "rebuilds": graphs.len() }));
    Ok(())
}

fn write_graph_outputs(out: &Path, graphs: &[BipartiteGraph], source: &PricePanel, target: &PricePanel) -> Result<(), CliError> {
    let path = out.join("edges.csv");
    let mut f = create_file(&path)?;
    for (k, g) in graphs.iter().enumerate() {
        g.write_edges_csv(&mut f, k == 0).map_err(CliError::csv(&path))?;
    }

    let path = out.join("in_degree.csv");
    let mut w = csv::Writer::from_path(&path).map_err(CliError::csv(&path))?;
    w.write_record(["as_of", "n_edges", "p25", "p50", "p75"]).map_err(CliError::csv(&path))?;
    for g in graphs {
        let (p25, p50, p75) = in_degree_percentiles(g);
        w.write_record([g.as_of.to_string(), g.n_edges().to_string(), p25.to_string(), p50.to_string(), p75.to_string()]).map_err(CliError::csv(&path))?;
    }
    w.flush().map_err(CliError::io(&path))?;

    let first = &graphs[0];
    let avg = time_average_biadjacency(graphs)?;
    let path = out.join("biadjacency_mean.csv");
    write_matrix_csv(create_file(&path)?, "target", &first.target_tickers, &first.source_tickers, &avg).map_err(CliError::csv(&path))?;

    match sector_block_median_abs(&avg, &first.source_tickers, &first.target_tickers, &source.sector, &target.sector) {
        Ok(s) => {
            let path = out.join("sector_median.csv");
            write_matrix_csv(create_file(&path)?, "target_sector", &s.target_sectors, &s.source_sectors, &s.values).map_err(CliError::csv(&path))?;
        }
        Err(ScreenError::UnlabeledTicker(t)) => log::warn!("skipping sector_median.csv: ticker {t} has no sector"),
        Err(e) => return Err(e.into()),
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// backtest
// ---------------------------------------------------------------------------

fn backtest(cli: &Cli, a: &BacktestArgs) -> Result<(), CliError> {
    let r = resolve(cli, "backtest", &a.run, |_| Ok(()))?;
    let markets = load_markets(&r.config)?;
    let (source, target) = oriented(&markets, r.config.direction);
    let report = run_backtest(source, target, &r.config.screen, &r.config.models, &r.config.backtest)?;
    write_report(&report, &r.out).map_err(CliError::io(&r.out))?;
    r.manifest.write(&r.out).map_err(CliError::io(&r.out))?;
    let median: Vec<Option<f64>> = report.median_sr();
    print_json(json!({ "out": r.out, "run_hash": r.manifest.run_hash, "days": report.dates.len(), "median_sr": median }));
    Ok(())
}

// ---------------------------------------------------------------------------
// experiment
// ---------------------------------------------------------------------------

fn experiment(cli: &Cli, a: &ExperimentArgs) -> Result<(), CliError> {
    let r = resolve(cli, "experiment", &a.run, |cfg| {
        let mut plan = match &a.plan {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(CliError::io(p))?;
                toml::from_str::<ExperimentPlan>(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
            }
            None => cfg.experiment.clone().unwrap_or_default(),
        };
        if let Some(k) = a.kind {
            plan.kind = k;
        }
        if let Some(f) = &a.fractions {
            plan.fractions = f.clone();
        }
        if let Some(l) = &a.lags {
            plan.lags = l.clone();
        }
        if let Some(s) = &a.seeds {
            plan.seeds = s.clone();
        }
        if let Some(k) = a.run.feature_kind {
            plan.feature_kind = k;
        }
        plan.validate()?;
        cfg.experiment = Some(plan);
        Ok(())
    })?;
    let plan = r.config.experiment.clone().unwrap_or_default();
    let markets = load_markets(&r.config)?;
    let output = run_plan(&plan, &markets, &settings(&r.config))?;
    output.write(&r.out)?;
    r.manifest.write(&r.out).map_err(CliError::io(&r.out))?;
    let tables: Vec<&String> = output.tables.iter().map(|(n, _)| n).collect();
    let reports: Vec<&String> = output.reports.iter().map(|(n, _)| n).collect();
    print_json(json!({ "out": r.out, "run_hash": r.manifest.run_hash, "tables": tables, "reports": reports }));
    Ok(())
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

struct SummaryRow {
    model: String,
    quantile: String,
    sr: String,
}

fn read_summary(path: &Path) -> Result<Vec<SummaryRow>, CliError> {
    let mut rdr = csv::Reader::from_path(path).map_err(CliError::csv(path))?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(CliError::csv(path))?;
        let get = |k: usize| rec.get(k).unwrap_or_default().to_string();
        rows.push(SummaryRow { model: get(0), quantile: get(1), sr: get(2) });
    }
    Ok(rows)
}

/// `sr_table.csv` (models × quantiles) and `cum_pnl.csv` (dates × series).
fn pivot_report(dir: &Path, out: &Path) -> Result<(), CliError> {
    let rows = read_summary(&dir.join("summary.csv"))?;
    let mut models: Vec<String> = Vec::new();
    let mut quantiles: Vec<String> = Vec::new();
    for r in &rows {
        if !models.contains(&r.model) {
            models.push(r.model.clone());
        }
        if !quantiles.contains(&r.quantile) {
            quantiles.push(r.quantile.clone());
        }
    }
    create_dir(out)?;
    let path = out.join("sr_table.csv");
    let mut w = csv::Writer::from_path(&path).map_err(CliError::csv(&path))?;
    let mut header = vec!["model".to_string()];
    header.extend(quantiles.iter().cloned());
    w.write_record(&header).map_err(CliError::csv(&path))?;
    for m in &models {
        let mut rec = vec![m.clone()];
        for q in &quantiles {
            rec.push(rows.iter().find(|r| &r.model == m && &r.quantile == q).map_or_else(|| "NaN".to_string(), |r| r.sr.clone()));
        }
        w.write_record(&rec).map_err(CliError::csv(&path))?;
    }
    w.flush().map_err(CliError::io(&path))?;

    let mut dates: Vec<String> = Vec::new();
    let mut columns: Vec<(String, Vec<String>)> = Vec::new();
    for r in &rows {
        let q: usize = r.quantile.trim_start_matches("qr").parse().map_err(|_| CliError::Usage(format!("bad quantile label `{}` in summary.csv", r.quantile)))?;
        let path = dir.join("pnl").join(series_file_name(&r.model, q));
        let mut rdr = csv::Reader::from_path(&path).map_err(CliError::csv(&path))?;
        let mut cum = Vec::new();
        let mut ds = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(CliError::csv(&path))?;
            ds.push(rec.get(0).unwrap_or_default().to_string());
            cum.push(rec.get(2).unwrap_or_default().to_string());
        }
        if dates.is_empty() {
            dates = ds;
        }
        columns.push((format!("{}_{}", r.model, r.quantile), cum));
    }
    let path = out.join("cum_pnl.csv");
    let mut w = csv::Writer::from_path(&path).map_err(CliError::csv(&path))?;
    let mut header = vec!["date".to_string()];
    header.extend(columns.iter().map(|(n, _)| n.clone()));
    w.write_record(&header).map_err(CliError::csv(&path))?;
    for (k, d) in dates.iter().enumerate() {
        let mut rec = vec![d.clone()];
        rec.extend(columns.iter().map(|(_, c)| c.get(k).cloned().unwrap_or_default()));
        w.write_record(&rec).map_err(CliError::csv(&path))?;
    }
    w.flush().map_err(CliError::io(&path))?;
    Ok(())
}

fn report(a: &ReportArgs) -> Result<(), CliError> {
    let out = a.out.clone().unwrap_or_else(|| a.run.clone());
    if a.run.join("summary.csv").exists() {
        pivot_report(&a.run, &out)?;
        print_json(json!({ "out": out, "reports": 1 }));
        return Ok(());
    }
    // an experiment directory: one table set per contained report
    let entries = fs::read_dir(&a.run).map_err(CliError::io(&a.run))?;
    let mut dirs: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.join("summary.csv").exists()).collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(CliError::Usage(format!("{} holds no summary.csv; pass a backtest or experiment output directory", a.run.display())));
    }
    for d in &dirs {
        pivot_report(d, &out.join(d.file_name().expect("directory entries have names")))?;
    }
    print_json(json!({ "out": out, "reports": dirs.len() }));
    Ok(())
}
