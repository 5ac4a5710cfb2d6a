//! Two-market generator with planted lead-lag structure.
//!
//! All series are generated as excess log returns and then turned into
//! prices. For a source stock `j` and source date `s`:
//!
//! ```text
//! x_j(s)      ~ N(0, source_sigma)            pvCLCL excess
//! xo_j(s)     = x_j(s) − u_j(s)               OPCL excess, u ~ N(0, gap_sigma)
//! ```
//!
//! For a target stock `i` on target date `t`, with `s = pair(t, true_lag)`
//! under the cross-calendar session rule:
//!
//! ```text
//! y_i(t)  = κ(s) Σ_j β_ji x_j(s) + φ y_i(t−1) + Σ_k β'_ki z_k(t−1) + N(0, noise_sigma)
//! z_i(t)  = y_i(t) + v_i(t)                   pvCLCL excess, v ~ N(0, gap_sigma)
//! ```
//!
//! `y` is the OPCL excess return that forecasting targets. `κ(s)` is 1
//! unless `shock_coupling` is set, in which case it scales with the source
//! ETF's absolute return on the paired date. The `β'` terms are optional
//! within-market plants on the previous target day.
//!
//! Each market has an ETF whose pvCLCL and OPCL returns are independent
//! Gaussian factors; raw stock returns are excess plus ETF returns. Closes
//! start at 100 and open prices are placed so `ln(close/open)` is the raw
//! OPCL return.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calendar::{pair_sessions, Session};
use crate::market_data::{default_etf, PricePanel};
use crate::rng::SeedStream;
use crate::screening::BipartiteGraph;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SyntheticError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedSpec {
    pub n_source: usize,
    pub n_target: usize,
    /// Trading dates per market.
    pub n_dates: usize,
    /// Fraction of (source, target) pairs carrying a planted edge.
    pub edge_density: f64,
    /// Planted slopes are uniform on this interval.
    pub beta_range: (f64, f64),
    /// Idiosyncratic daily volatility of target OPCL excess returns.
    pub noise_sigma: f64,
    /// Daily volatility of source pvCLCL excess returns.
    pub source_sigma: f64,
    /// Volatility of the overnight component separating pvCLCL from OPCL.
    pub gap_sigma: f64,
    /// Daily volatility of each market ETF.
    pub market_sigma: f64,
    pub true_lag: usize,
    pub sector_count: usize,
    /// `κ` in `(1 − κ) + κ·|m|/market_sigma`, tying planted effects to the
    /// size of the source ETF move.
    pub shock_coupling: Option<f64>,
    /// AR(1) coefficient on the target's own previous OPCL excess return.
    pub target_ar: f64,
    /// Density of within-target-market plants on the previous day's pvCLCL.
    pub within_density: f64,
    pub within_beta_range: (f64, f64),
    /// Fraction of business days dropped as holidays in each market; the
    /// two markets' holidays never coincide.
    pub holiday_rate: f64,
    pub start_date: NaiveDate,
    pub source_market: String,
    pub target_market: String,
    pub seed: u64,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        Self {
            n_source: 50,
            n_target: 50,
            n_dates: 1000,
            edge_density: 0.05,
            beta_range: (0.3, 0.6),
            noise_sigma: 0.02,
            source_sigma: 0.02,
            gap_sigma: 0.02,
            market_sigma: 0.01,
            true_lag: 1,
            sector_count: 5,
            shock_coupling: None,
            target_ar: 0.0,
            within_density: 0.0,
            within_beta_range: (0.3, 0.6),
            holiday_rate: 0.02,
            start_date: NaiveDate::from_ymd_opt(2015, 1, 5).expect("valid date"),
            source_market: "US".into(),
            target_market: "CN".into(),
            seed: 0,
        }
    }
}

impl PlantedSpec {
    pub fn validate(&self) -> Result<(), SyntheticError> {
        let bad = |m: String| Err(SyntheticError::InvalidSpec(m));
        if self.n_source == 0 || self.n_target == 0 {
            return bad("need at least one source and one target stock".into());
        }
        if self.n_dates < 2 {
            return bad(format!("n_dates = {} < 2", self.n_dates));
        }
        for (name, v) in [("edge_density", self.edge_density), ("within_density", self.within_density)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} = {v} outside [0, 1]"));
            }
        }
        if !(0.0..0.5).contains(&self.holiday_rate) {
            return bad(format!("holiday_rate = {} outside [0, 0.5)", self.holiday_rate));
        }
        if !(self.noise_sigma > 0.0) {
            return bad(format!("noise_sigma = {} must be > 0", self.noise_sigma));
        }
        for (name, v) in [("source_sigma", self.source_sigma), ("gap_sigma", self.gap_sigma), ("market_sigma", self.market_sigma)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} = {v}"));
            }
        }
        if self.beta_range.0 > self.beta_range.1 || self.within_beta_range.0 > self.within_beta_range.1 {
            return bad("beta range lower bound exceeds upper bound".into());
        }
        if let Some(k) = self.shock_coupling {
            if !(0.0..=1.0).contains(&k) || self.market_sigma == 0.0 {
                return bad(format!("shock_coupling = {k} needs [0, 1] and market_sigma > 0"));
            }
        }
        if self.sector_count == 0 {
            return bad("sector_count = 0".into());
        }
        let (Some(_), Some(_)) = (Session::preset(&self.source_market), Session::preset(&self.target_market)) else {
            return bad(format!("unknown market pair {}/{}", self.source_market, self.target_market));
        };
        if self.true_lag == 0 && !lag0_admissible(&self.source_market, &self.target_market) {
            return bad(format!("true_lag 0 is inadmissible for {} -> {}", self.source_market, self.target_market));
        }
        Ok(())
    }
}

fn lag0_admissible(source: &str, target: &str) -> bool {
    match (Session::preset(source), Session::preset(target)) {
        (Some(s), Some(t)) => s.close_utc_min < t.open_utc_min,
        _ => false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedEdge {
    pub source: String,
    pub target: String,
    pub beta: f64,
    pub lag: usize,
}

/// Output of [`generate`].
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticMarkets {
    pub source: PricePanel,
    pub target: PricePanel,
    /// Cross-market plants (source stock → target stock).
    pub planted: Vec<PlantedEdge>,
    /// Within-target-market plants at lag 1.
    pub within_planted: Vec<PlantedEdge>,
}

pub fn write_planted_csv<W: Write>(edges: &[PlantedEdge], writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["source", "target", "beta", "lag"])?;
    for e in edges {
        w.write_record([e.source.clone(), e.target.clone(), e.beta.to_string(), e.lag.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn business_days(start: NaiveDate, count: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(count);
    let mut d = start;
    while out.len() < count {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d += Duration::days(1);
    }
    out
}

fn ticker(prefix: &str, i: usize) -> String {
    format!("{prefix}{:04}", i + 1)
}

struct MarketSeries {
    tickers: Vec<String>,
    /// Excess pvCLCL and OPCL, dates × stocks.
    pv: Array2<f64>,
    op: Array2<f64>,
    etf_pv: Vec<f64>,
    etf_op: Vec<f64>,
}

fn build_panel(market: &str, dates: Vec<NaiveDate>, m: &MarketSeries, sectors: &[String], streams: &SeedStream) -> PricePanel {
    let n_dates = dates.len();
    let etf = default_etf(market).unwrap_or("ETF").to_string();
    let mut tickers = m.tickers.clone();
    tickers.push(etf.clone());
    let n = tickers.len();
    let mut open = Array2::<f64>::zeros((n_dates, n));
    let mut close = Array2::<f64>::zeros((n_dates, n));
    let mut volume = Array2::<f64>::zeros((n_dates, n));
    let mut mcap = Array2::<f64>::zeros((n_dates, n));
    let mut rng = streams.rng(&["liquidity", market]);
    let level = LogNormal::new(13.0, 1.0).expect("valid lognormal");
    let daily = LogNormal::new(0.0, 0.3).expect("valid lognormal");
    let shares = LogNormal::new(18.0, 1.0).expect("valid lognormal");
    for j in 0..n {
        let (pv, op): (Vec<f64>, Vec<f64>) = if j < m.tickers.len() {
            (
                (0..n_dates).map(|t| m.pv[[t, j]] + m.etf_pv[t]).collect(),
                (0..n_dates).map(|t| m.op[[t, j]] + m.etf_op[t]).collect(),
            )
        } else {
            (m.etf_pv.clone(), m.etf_op.clone())
        };
        let vol_level: f64 = level.sample(&mut rng);
        let n_shares: f64 = shares.sample(&mut rng);
        let mut c = 100.0f64;
        for t in 0..n_dates {
            if t > 0 {
                c *= pv[t].exp();
            }
            close[[t, j]] = c;
            open[[t, j]] = c * (-op[t]).exp();
            volume[[t, j]] = (vol_level * daily.sample(&mut rng)).round().max(1.0);
            mcap[[t, j]] = c * n_shares;
        }
    }
    let mut sector: BTreeMap<String, String> = m.tickers.iter().cloned().zip(sectors.iter().cloned()).collect();
    sector.insert(etf.clone(), "ETF".into());
    PricePanel::new(market, dates, tickers, open, close, volume, mcap, sector, &etf).expect("generated panel is valid")
}

pub fn generate(spec: &PlantedSpec) -> Result<SyntheticMarkets, SyntheticError> {
    spec.validate()?;
    let streams = SeedStream::new(spec.seed).child(&["synth"]);
    let nd = spec.n_dates;

    // calendars with disjoint holidays
    let pool = business_days(spec.start_date, nd + nd / 10 + 20);
    let mut cal_rng = streams.rng(&["calendar"]);
    let mut src_dates = Vec::with_capacity(nd);
    let mut tgt_dates = Vec::with_capacity(nd);
    for &d in &pool {
        let u: f64 = cal_rng.random();
        if u >= spec.holiday_rate && src_dates.len() < nd {
            src_dates.push(d);
        }
        if !(spec.holiday_rate..2.0 * spec.holiday_rate).contains(&u) && tgt_dates.len() < nd {
            tgt_dates.push(d);
        }
    }
    let src_session = Session::preset(&spec.source_market).expect("validated");
    let tgt_session = Session::preset(&spec.target_market).expect("validated");
    let pairing = pair_sessions(&tgt_dates, tgt_session, &spec.target_market, &src_dates, src_session, &spec.source_market, spec.true_lag)
        .map_err(|e| SyntheticError::InvalidSpec(e.to_string()))?;

    // plants
    let src_prefix = spec.source_market.to_ascii_uppercase();
    let tgt_prefix = spec.target_market.to_ascii_uppercase();
    let src_tickers: Vec<String> = (0..spec.n_source).map(|j| ticker(&src_prefix, j)).collect();
    let tgt_tickers: Vec<String> = (0..spec.n_target).map(|i| ticker(&tgt_prefix, i)).collect();
    let mut plant_rng = streams.rng(&["plant"]);
    let mut betas: Vec<Vec<(usize, f64)>> = vec![Vec::new(); spec.n_target];
    let mut within: Vec<Vec<(usize, f64)>> = vec![Vec::new(); spec.n_target];
    let mut planted = Vec::new();
    let mut within_planted = Vec::new();
    let draw = |rng: &mut rand_chacha::ChaCha8Rng, (lo, hi): (f64, f64)| if hi > lo { rng.random_range(lo..hi) } else { lo };
    for i in 0..spec.n_target {
        for j in 0..spec.n_source {
            let u: f64 = plant_rng.random();
            if u < spec.edge_density {
                let b = draw(&mut plant_rng, spec.beta_range);
                betas[i].push((j, b));
                planted.push(PlantedEdge { source: src_tickers[j].clone(), target: tgt_tickers[i].clone(), beta: b, lag: spec.true_lag });
            }
        }
        if spec.within_density > 0.0 {
            for k in 0..spec.n_target {
                let u: f64 = plant_rng.random();
                if u < spec.within_density {
                    let b = draw(&mut plant_rng, spec.within_beta_range);
                    within[i].push((k, b));
                    within_planted.push(PlantedEdge { source: tgt_tickers[k].clone(), target: tgt_tickers[i].clone(), beta: b, lag: 1 });
                }
            }
        }
    }

    // source market
    let normal = |s: f64| Normal::new(0.0, s).expect("finite sigma");
    let mut src_rng = streams.rng(&["source"]);
    let src_pv = Array2::from_shape_simple_fn((nd, spec.n_source), || normal(spec.source_sigma).sample(&mut src_rng));
    let src_op = {
        let g = normal(spec.gap_sigma);
        let mut m = src_pv.clone();
        m.mapv_inplace(|v| v - g.sample(&mut src_rng));
        m
    };
    let mut etf_rng = streams.rng(&["etf", "source"]);
    let src_etf_pv: Vec<f64> = (0..nd).map(|_| normal(spec.market_sigma).sample(&mut etf_rng)).collect();
    let src_etf_op: Vec<f64> = src_etf_pv.iter().map(|m| m - normal(spec.gap_sigma / 2.0).sample(&mut etf_rng)).collect();

    // target market, sequential in t for the autoregressive terms
    let mut tgt_rng = streams.rng(&["target"]);
    let noise = normal(spec.noise_sigma);
    let gap = normal(spec.gap_sigma);
    let mut y = Array2::<f64>::zeros((nd, spec.n_target));
    let mut z = Array2::<f64>::zeros((nd, spec.n_target));
    for t in 0..nd {
        let kappa = match (spec.shock_coupling, pairing[t]) {
            (Some(k), Some(s)) => (1.0 - k) + k * src_etf_pv[s].abs() / spec.market_sigma,
            _ => 1.0,
        };
        for i in 0..spec.n_target {
            let mut v = noise.sample(&mut tgt_rng);
            if let Some(s) = pairing[t] {
                v += kappa * betas[i].iter().map(|&(j, b)| b * src_pv[[s, j]]).sum::<f64>();
            }
            if t > 0 {
                v += spec.target_ar * y[[t - 1, i]];
                v += within[i].iter().map(|&(k, b)| b * z[[t - 1, k]]).sum::<f64>();
            }
            y[[t, i]] = v;
            z[[t, i]] = v + gap.sample(&mut tgt_rng);
        }
    }
    let mut etf_rng = streams.rng(&["etf", "target"]);
    let tgt_etf_pv: Vec<f64> = (0..nd).map(|_| normal(spec.market_sigma).sample(&mut etf_rng)).collect();
    let tgt_etf_op: Vec<f64> = tgt_etf_pv.iter().map(|m| m - normal(spec.gap_sigma / 2.0).sample(&mut etf_rng)).collect();

    let mut sector_rng = streams.rng(&["sectors"]);
    let mut sectors = |n: usize| -> Vec<String> { (0..n).map(|_| format!("S{:02}", sector_rng.random_range(0..spec.sector_count) + 1)).collect() };
    let src_sectors = sectors(spec.n_source);
    let tgt_sectors = sectors(spec.n_target);

    let source = build_panel(
        &spec.source_market,
        src_dates,
        &MarketSeries { tickers: src_tickers, pv: src_pv, op: src_op, etf_pv: src_etf_pv, etf_op: src_etf_op },
        &src_sectors,
        &streams,
    );
    let target = build_panel(
        &spec.target_market,
        tgt_dates,
        &MarketSeries { tickers: tgt_tickers, pv: z, op: y, etf_pv: tgt_etf_pv, etf_op: tgt_etf_op },
        &tgt_sectors,
        &streams,
    );
    Ok(SyntheticMarkets { source, target, planted, within_planted })
}

/// Precision and recall of a screened graph against the planted edges. A
/// found edge is a true positive when the pair is planted and the sign of
/// its t-statistic matches the planted slope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryMetrics {
    /// `None` when the graph has no edges.
    pub precision: Option<f64>,
    /// `None` when nothing was planted.
    pub recall: Option<f64>,
    pub true_positives: usize,
    pub found: usize,
    pub planted: usize,
}

pub fn recovery_metrics(graph: &BipartiteGraph, planted: &[PlantedEdge]) -> RecoveryMetrics {
    let truth: BTreeMap<(&str, &str), f64> = planted.iter().map(|e| ((e.source.as_str(), e.target.as_str()), e.beta)).collect();
    let found: BTreeSet<(usize, usize)> = graph.edges.iter().map(|e| (e.source, e.target)).collect();
    let tp = graph
        .edges
        .iter()
        .filter(|e| {
            let key = (graph.source_tickers[e.source].as_str(), graph.target_tickers[e.target].as_str());
            truth.get(&key).is_some_and(|&b| b.signum() == e.t_beta.signum() && b != 0.0)
        })
        .count();
    RecoveryMetrics {
        precision: (!found.is_empty()).then(|| tp as f64 / found.len() as f64),
        recall: (!truth.is_empty()).then(|| tp as f64 / truth.len() as f64),
        true_positives: tp,
        found: found.len(),
        planted: truth.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calendar::precedes;
    use crate::market_data::{excess_returns, ReturnKind};
    use crate::screening::{Edge, ScreenConfig};

    fn small() -> PlantedSpec {
        PlantedSpec { n_source: 6, n_target: 5, n_dates: 120, edge_density: 0.3, seed: 11, ..Default::default() }
    }

    #[test]
    fn deterministic_and_valid() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.source.dates.len(), 120);
        assert_eq!(a.target.dates.len(), 120);
        assert_ne!(a.source.dates, a.target.dates);
        let c = generate(&PlantedSpec { seed: 12, ..small() }).unwrap();
        assert_ne!(a.source.close, c.source.close);
    }

    #[test]
    fn holidays_are_disjoint() {
        let m = generate(&PlantedSpec { n_dates: 2000, ..small() }).unwrap();
        let s: BTreeSet<_> = m.source.dates.iter().collect();
        let t: BTreeSet<_> = m.target.dates.iter().collect();
        let last = *m.source.dates.last().unwrap().min(m.target.dates.last().unwrap());
        let bdays = business_days(m.source.dates[0], 3000);
        let mut dropped_both = 0;
        let mut dropped = 0;
        for d in bdays.iter().take_while(|d| **d <= last) {
            match (s.contains(d), t.contains(d)) {
                (false, false) => dropped_both += 1,
                (false, true) | (true, false) => dropped += 1,
                _ => {}
            }
        }
        assert_eq!(dropped_both, 0);
        assert!(dropped > 40 && dropped < 130, "{dropped}");
    }

    #[test]
    fn returns_roundtrip_to_planted_series() {
        let spec = small();
        let m = generate(&spec).unwrap();
        let src = excess_returns(&m.source, ReturnKind::PvClCl).unwrap();
        let tgt_op = excess_returns(&m.target, ReturnKind::OpCl).unwrap();
        let pairing = pair_sessions(&m.target.dates, Session::CN, "CN", &m.source.dates, Session::US, "US", 1).unwrap();
        // rebuild each target's OPCL excess from the planted betas and check the
        // residual has the noise scale
        let mut resid = Vec::new();
        for (t, p) in pairing.iter().enumerate() {
            let Some(s) = p else { continue };
            if *s == 0 {
                continue;
            }
            for (i, tk) in m.target.stock_tickers().iter().enumerate() {
                let fitted: f64 = m
                    .planted
                    .iter()
                    .filter(|e| &e.target == tk)
                    .map(|e| e.beta * src.values[[s - 1, src.ticker_index(&e.source).unwrap()]])
                    .sum();
                resid.push(tgt_op.values[[t, i]] - fitted);
            }
        }
        let sd = crate::stats::sample_std(&resid);
        assert!((sd - spec.noise_sigma).abs() < 0.15 * spec.noise_sigma, "{sd}");
        let etf = src.column("SPY").unwrap();
        assert!(etf.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn pairing_respects_sessions() {
        let m = generate(&PlantedSpec { n_dates: 500, ..small() }).unwrap();
        let p = pair_sessions(&m.target.dates, Session::CN, "CN", &m.source.dates, Session::US, "US", 1).unwrap();
        for (t, s) in p.iter().enumerate() {
            if let Some(s) = s {
                assert!(precedes(m.source.dates[*s], Session::US, m.target.dates[t], Session::CN));
            }
        }
    }

    #[test]
    fn invalid_specs() {
        assert!(generate(&PlantedSpec { noise_sigma: 0.0, ..small() }).is_err());
        assert!(generate(&PlantedSpec { edge_density: 1.5, ..small() }).is_err());
        assert!(generate(&PlantedSpec { true_lag: 0, ..small() }).is_err());
        let swapped = PlantedSpec { true_lag: 0, source_market: "CN".into(), target_market: "US".into(), ..small() };
        assert!(generate(&swapped).is_ok());
    }

    #[test]
    fn recovery_examples() {
        let planted = vec![
            PlantedEdge { source: "A".into(), target: "X".into(), beta: 0.5, lag: 1 },
            PlantedEdge { source: "B".into(), target: "X".into(), beta: -0.5, lag: 1 },
        ];
        let mut g = BipartiteGraph::empty(
            vec!["A".into(), "B".into(), "C".into()],
            vec!["X".into()],
            NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
            ScreenConfig::default(),
        );
        let r = recovery_metrics(&g, &planted);
        assert_eq!((r.precision, r.recall), (None, Some(0.0)));
        g.edges = vec![
            Edge { source: 0, target: 0, t_beta: 5.0, synthetic: false, degenerate: false },
            Edge { source: 1, target: 0, t_beta: -4.0, synthetic: false, degenerate: false },
        ];
        let r = recovery_metrics(&g, &planted);
        assert_eq!((r.precision, r.recall), (Some(1.0), Some(1.0)));
        // wrong sign and a false positive
        g.edges[1].t_beta = 4.0;
        g.edges.push(Edge { source: 2, target: 0, t_beta: 3.0, synthetic: false, degenerate: false });
        let r = recovery_metrics(&g, &planted);
        assert_eq!((r.true_positives, r.found), (1, 3));
        assert_eq!(r.recall, Some(0.5));
    }
}
