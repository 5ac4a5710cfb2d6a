//! Daily price panels, the per-market CSV contract, log returns, market
//! excess returns, winsorization, universe selection and median dollar
//! volume.
//!
//! Missing observations are stored as `NaN` and never as zero. Every
//! consumer checks [`is_missing`] before use.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calendar::TradingCalendar;
use crate::stats;

pub const CSV_HEADER: [&str; 7] = ["date", "ticker", "open", "close", "volume", "market_cap", "sector"];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing column `{0}` in CSV header")]
    MissingColumn(String),
    #[error("row {row}: dates for ticker {ticker} are not increasing ({date})")]
    NonMonotoneDates { row: usize, ticker: String, date: NaiveDate },
    #[error("row {row}: non-positive {field} price {value} for ticker {ticker}")]
    NegativePrice { row: usize, ticker: String, field: &'static str, value: f64 },
    #[error("row {row}: duplicate record for ticker {ticker} on {date}")]
    DuplicateTickerDate { row: usize, ticker: String, date: NaiveDate },
    #[error("row {row}: cannot parse {column} value `{value}`")]
    InvalidField { row: usize, column: &'static str, value: String },
    #[error("ETF {0} is absent or has missing prices")]
    IncompleteEtf(String),
    #[error("panel has inconsistent dimensions: {0}")]
    Shape(String),
    #[error("panel has no dates")]
    Empty,
    #[error("need at least {needed} dates, have {have}")]
    InsufficientDates { needed: usize, have: usize },
    #[error("return kinds differ: panel is {panel:?}, ETF series is {etf:?}")]
    KindMismatch { panel: ReturnKind, etf: ReturnKind },
    #[error("ETF series dates do not match the panel dates")]
    DateMismatch,
    #[error("winsorization needs at least two values")]
    EmptyInput,
    #[error("invalid percentile bounds ({lower}, {upper})")]
    InvalidPercentiles { lower: f64, upper: f64 },
    #[error("requested universe of {requested} but only {available} tickers are available")]
    NTooLarge { requested: usize, available: usize },
    #[error("unknown ticker {0}")]
    UnknownTicker(String),
    #[error("{ticker}: fewer than 21 complete trading days before {date}")]
    InsufficientHistory { ticker: String, date: NaiveDate },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[inline]
pub fn is_missing(v: f64) -> bool {
    v.is_nan()
}

/// Aligned daily records for one market. Matrices are `dates × tickers`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricePanel {
    pub market_id: String,
    pub dates: Vec<NaiveDate>,
    pub tickers: Vec<String>,
    pub open: Array2<f64>,
    pub close: Array2<f64>,
    pub volume: Array2<f64>,
    pub market_cap: Array2<f64>,
    pub sector: BTreeMap<String, String>,
    pub etf_ticker: String,
}

impl PricePanel {
    /// Builds a panel and checks every invariant.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        market_id: impl Into<String>,
        dates: Vec<NaiveDate>,
        tickers: Vec<String>,
        open: Array2<f64>,
        close: Array2<f64>,
        volume: Array2<f64>,
        market_cap: Array2<f64>,
        sector: BTreeMap<String, String>,
        etf_ticker: impl Into<String>,
    ) -> Result<Self, DataError> {
        let panel = Self {
            market_id: market_id.into(),
            dates,
            tickers,
            open,
            close,
            volume,
            market_cap,
            sector,
            etf_ticker: etf_ticker.into(),
        };
        panel.validate()?;
        Ok(panel)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.dates.is_empty() {
            return Err(DataError::Empty);
        }
        let shape = (self.dates.len(), self.tickers.len());
        for (name, m) in [("open", &self.open), ("close", &self.close), ("volume", &self.volume), ("market_cap", &self.market_cap)] {
            if m.dim() != shape {
                return Err(DataError::Shape(format!("{name} is {:?}, expected {:?}", m.dim(), shape)));
            }
        }
        TradingCalendar::new(self.market_id.clone(), self.dates.clone())
            .map_err(|e| DataError::Shape(e.to_string()))?;
        for ((t, j), &v) in self.close.indexed_iter() {
            if !is_missing(v) && v <= 0.0 {
                return Err(DataError::NegativePrice { row: t, ticker: self.tickers[j].clone(), field: "close", value: v });
            }
        }
        for ((t, j), &v) in self.open.indexed_iter() {
            if !is_missing(v) && v <= 0.0 {
                return Err(DataError::NegativePrice { row: t, ticker: self.tickers[j].clone(), field: "open", value: v });
            }
        }
        let etf = self.ticker_index(&self.etf_ticker).ok_or_else(|| DataError::IncompleteEtf(self.etf_ticker.clone()))?;
        let complete = self.close.column(etf).iter().chain(self.open.column(etf).iter()).all(|v| !is_missing(*v));
        if !complete {
            return Err(DataError::IncompleteEtf(self.etf_ticker.clone()));
        }
        Ok(())
    }

    pub fn ticker_index(&self, ticker: &str) -> Option<usize> {
        self.tickers.iter().position(|t| t == ticker)
    }

    pub fn calendar(&self) -> TradingCalendar {
        TradingCalendar { market_id: self.market_id.clone(), dates: self.dates.clone() }
    }

    /// Tickers other than the market ETF.
    pub fn stock_tickers(&self) -> Vec<String> {
        self.tickers.iter().filter(|t| **t != self.etf_ticker).cloned().collect()
    }

    /// Restricts the panel to the given tickers (the ETF is always kept).
    pub fn subset(&self, tickers: &[String]) -> Result<PricePanel, DataError> {
        let mut keep: Vec<String> = tickers.to_vec();
        if !keep.contains(&self.etf_ticker) {
            keep.push(self.etf_ticker.clone());
        }
        let idx: Vec<usize> = keep
            .iter()
            .map(|t| self.ticker_index(t).ok_or_else(|| DataError::UnknownTicker(t.clone())))
            .collect::<Result<_, _>>()?;
        let pick = |m: &Array2<f64>| m.select(ndarray::Axis(1), &idx);
        let sector = keep.iter().filter_map(|t| self.sector.get(t).map(|s| (t.clone(), s.clone()))).collect();
        PricePanel::new(
            self.market_id.clone(),
            self.dates.clone(),
            keep,
            pick(&self.open),
            pick(&self.close),
            pick(&self.volume),
            pick(&self.market_cap),
            sector,
            self.etf_ticker.clone(),
        )
    }
}

/// Default market ETF per market identifier.
pub fn default_etf(market_id: &str) -> Option<&'static str> {
    match market_id.to_ascii_uppercase().as_str() {
        "US" => Some("SPY"),
        "CN" => Some("513500.SH"),
        _ => None,
    }
}

// ---------------------------------------------------------------------------
// CSV contract
// ---------------------------------------------------------------------------

pub fn load_price_csv(path: impl AsRef<Path>, market_id: &str, etf_ticker: &str) -> Result<PricePanel, DataError> {
    let file = std::fs::File::open(path)?;
    read_price_csv(file, market_id, etf_ticker)
}

struct Record {
    open: f64,
    close: f64,
    volume: f64,
    market_cap: f64,
}

/// Parses the long-format CSV contract. Data row numbers in errors are
/// 1-based and exclude the header.
pub fn read_price_csv<R: Read>(reader: R, market_id: &str, etf_ticker: &str) -> Result<PricePanel, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut col = HashMap::new();
    for name in CSV_HEADER {
        let pos = headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))?;
        col.insert(name, pos);
    }
    let field = |rec: &csv::StringRecord, name: &str| rec.get(col[name]).unwrap_or("").to_string();

    let mut rows: BTreeMap<String, BTreeMap<NaiveDate, Record>> = BTreeMap::new();
    let mut last_date: HashMap<String, NaiveDate> = HashMap::new();
    let mut sector: BTreeMap<String, String> = BTreeMap::new();
    let mut ticker_order: Vec<String> = Vec::new();

    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let date_s = field(&rec, "date");
        let date = NaiveDate::parse_from_str(&date_s, "%Y-%m-%d")
            .map_err(|_| DataError::InvalidField { row, column: "date", value: date_s.clone() })?;
        let ticker = field(&rec, "ticker");
        if ticker.is_empty() {
            return Err(DataError::InvalidField { row, column: "ticker", value: ticker });
        }
        let num = |name: &'static str| -> Result<f64, DataError> {
            let s = field(&rec, name);
            if s.is_empty() {
                return Ok(f64::NAN);
            }
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or(DataError::InvalidField { row, column: name, value: s })
        };
        let r = Record { open: num("open")?, close: num("close")?, volume: num("volume")?, market_cap: num("market_cap")? };
        for (fname, v) in [("open", r.open), ("close", r.close)] {
            if !is_missing(v) && v <= 0.0 {
                return Err(DataError::NegativePrice { row, ticker, field: fname, value: v });
            }
        }
        if let Some(prev) = last_date.get(&ticker) {
            if date == *prev {
                return Err(DataError::DuplicateTickerDate { row, ticker, date });
            }
            if date < *prev {
                if rows.get(&ticker).is_some_and(|m| m.contains_key(&date)) {
                    return Err(DataError::DuplicateTickerDate { row, ticker, date });
                }
                return Err(DataError::NonMonotoneDates { row, ticker, date });
            }
        } else {
            ticker_order.push(ticker.clone());
        }
        last_date.insert(ticker.clone(), date);
        let s = field(&rec, "sector");
        if !s.is_empty() {
            sector.entry(ticker.clone()).or_insert(s);
        }
        rows.entry(ticker).or_default().insert(date, r);
    }

    let mut dates: Vec<NaiveDate> = rows.values().flat_map(|m| m.keys().copied()).collect();
    dates.sort();
    dates.dedup();
    if dates.is_empty() {
        return Err(DataError::Empty);
    }
    let tickers = ticker_order;
    let shape = (dates.len(), tickers.len());
    let mut open = Array2::from_elem(shape, f64::NAN);
    let mut close = open.clone();
    let mut volume = open.clone();
    let mut mcap = open.clone();
    for (j, t) in tickers.iter().enumerate() {
        for (d, r) in &rows[t] {
            let i = dates.binary_search(d).expect("date collected above");
            open[[i, j]] = r.open;
            close[[i, j]] = r.close;
            volume[[i, j]] = r.volume;
            mcap[[i, j]] = r.market_cap;
        }
    }
    PricePanel::new(market_id, dates, tickers, open, close, volume, mcap, sector, etf_ticker)
}

fn fmt_num(v: f64) -> String {
    if is_missing(v) {
        String::new()
    } else {
        // shortest representation that round-trips exactly
        format!("{v}")
    }
}

/// Writes a panel in the CSV contract, rows ordered by date then ticker
/// column order. Absent (all-missing) ticker-days are written with empty
/// fields so that the calendar survives a round trip.
pub fn write_price_csv<W: Write>(panel: &PricePanel, writer: W) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER)?;
    for (i, date) in panel.dates.iter().enumerate() {
        let ds = date.format("%Y-%m-%d").to_string();
        for (j, t) in panel.tickers.iter().enumerate() {
            let sector = panel.sector.get(t).map(String::as_str).unwrap_or("");
            w.write_record([
                ds.as_str(),
                t.as_str(),
                &fmt_num(panel.open[[i, j]]),
                &fmt_num(panel.close[[i, j]]),
                &fmt_num(panel.volume[[i, j]]),
                &fmt_num(panel.market_cap[[i, j]]),
                sector,
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_price_csv(panel: &PricePanel, path: impl AsRef<Path>) -> Result<(), DataError> {
    let file = std::fs::File::create(path)?;
    write_price_csv(panel, std::io::BufWriter::new(file))
}

// ---------------------------------------------------------------------------
// Returns
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ReturnKind {
    /// Previous close to close.
    #[serde(rename = "pvCLCL", alias = "pvclcl", alias = "PVCLCL")]
    PvClCl,
    /// Open to close within one session.
    #[serde(rename = "OPCL", alias = "opcl")]
    OpCl,
}

impl ReturnKind {
    pub fn label(&self) -> &'static str {
        match self {
            ReturnKind::PvClCl => "pvCLCL",
            ReturnKind::OpCl => "OPCL",
        }
    }
}

impl std::str::FromStr for ReturnKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pvclcl" => Ok(ReturnKind::PvClCl),
            "opcl" => Ok(ReturnKind::OpCl),
            _ => Err(format!("unknown return kind `{s}` (expected pvCLCL or OPCL)")),
        }
    }
}

/// Log returns, `dates × tickers`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnPanel {
    pub market_id: String,
    pub kind: ReturnKind,
    pub excess: bool,
    pub dates: Vec<NaiveDate>,
    pub tickers: Vec<String>,
    pub values: Array2<f64>,
}

impl ReturnPanel {
    pub fn ticker_index(&self, ticker: &str) -> Option<usize> {
        self.tickers.iter().position(|t| t == ticker)
    }

    pub fn column(&self, ticker: &str) -> Option<Vec<f64>> {
        self.ticker_index(ticker).map(|j| self.values.column(j).to_vec())
    }

    pub fn date_index(&self, date: NaiveDate) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }

    /// Drops the listed tickers (used to remove the ETF from feature sets).
    pub fn without(&self, drop: &[&str]) -> ReturnPanel {
        let idx: Vec<usize> = (0..self.tickers.len()).filter(|&j| !drop.contains(&self.tickers[j].as_str())).collect();
        ReturnPanel {
            market_id: self.market_id.clone(),
            kind: self.kind,
            excess: self.excess,
            dates: self.dates.clone(),
            tickers: idx.iter().map(|&j| self.tickers[j].clone()).collect(),
            values: self.values.select(ndarray::Axis(1), &idx),
        }
    }
}

/// A per-date market ETF return series.
#[derive(Debug, Clone, PartialEq)]
pub struct EtfSeries {
    pub kind: ReturnKind,
    pub dates: Vec<NaiveDate>,
    pub values: Vec<f64>,
}

pub fn compute_returns(panel: &PricePanel, kind: ReturnKind) -> Result<ReturnPanel, DataError> {
    let (n_dates, n_tickers) = panel.close.dim();
    let (dates, values) = match kind {
        ReturnKind::PvClCl => {
            if n_dates < 2 {
                return Err(DataError::InsufficientDates { needed: 2, have: n_dates });
            }
            let mut v = Array2::from_elem((n_dates - 1, n_tickers), f64::NAN);
            for t in 1..n_dates {
                for j in 0..n_tickers {
                    let (p0, p1) = (panel.close[[t - 1, j]], panel.close[[t, j]]);
                    if !is_missing(p0) && !is_missing(p1) {
                        v[[t - 1, j]] = (p1 / p0).ln();
                    }
                }
            }
            (panel.dates[1..].to_vec(), v)
        }
        ReturnKind::OpCl => {
            if n_dates < 1 {
                return Err(DataError::InsufficientDates { needed: 1, have: n_dates });
            }
            let mut v = Array2::from_elem((n_dates, n_tickers), f64::NAN);
            for t in 0..n_dates {
                for j in 0..n_tickers {
                    let (o, c) = (panel.open[[t, j]], panel.close[[t, j]]);
                    if !is_missing(o) && !is_missing(c) {
                        v[[t, j]] = (c / o).ln();
                    }
                }
            }
            (panel.dates.clone(), v)
        }
    };
    Ok(ReturnPanel { market_id: panel.market_id.clone(), kind, excess: false, dates, tickers: panel.tickers.clone(), values })
}

/// Extracts one column of a raw return panel as an ETF series.
pub fn etf_series(returns: &ReturnPanel, etf_ticker: &str) -> Result<EtfSeries, DataError> {
    let values = returns.column(etf_ticker).ok_or_else(|| DataError::UnknownTicker(etf_ticker.to_string()))?;
    Ok(EtfSeries { kind: returns.kind, dates: returns.dates.clone(), values })
}

pub fn to_excess(returns: &ReturnPanel, etf: &EtfSeries) -> Result<ReturnPanel, DataError> {
    if returns.kind != etf.kind {
        return Err(DataError::KindMismatch { panel: returns.kind, etf: etf.kind });
    }
    if returns.dates != etf.dates {
        return Err(DataError::DateMismatch);
    }
    let mut values = returns.values.clone();
    for (t, mut row) in values.rows_mut().into_iter().enumerate() {
        let m = etf.values[t];
        row.mapv_inplace(|v| v - m);
    }
    Ok(ReturnPanel { excess: true, values, ..returns.clone() })
}

/// Market excess returns of the given kind using the panel's own ETF.
pub fn excess_returns(panel: &PricePanel, kind: ReturnKind) -> Result<ReturnPanel, DataError> {
    let raw = compute_returns(panel, kind)?;
    let etf = etf_series(&raw, &panel.etf_ticker)?;
    to_excess(&raw, &etf)
}

// ---------------------------------------------------------------------------
// Winsorization
// ---------------------------------------------------------------------------

/// Default winsorization bounds, in percent.
pub const WINSOR_LOWER: f64 = 0.5;
pub const WINSOR_UPPER: f64 = 99.5;

/// Clips values outside the `[lower_pct, upper_pct]` percentile range to the
/// percentile values (linear-interpolation convention, see [`crate::stats`]).
pub fn winsorize_window(values: &[f64], lower_pct: f64, upper_pct: f64) -> Result<Vec<f64>, DataError> {
    let mut out = values.to_vec();
    winsorize_in_place(&mut out, lower_pct, upper_pct)?;
    Ok(out)
}

pub fn winsorize_in_place(values: &mut [f64], lower_pct: f64, upper_pct: f64) -> Result<(), DataError> {
    if values.len() < 2 {
        return Err(DataError::EmptyInput);
    }
    if !(lower_pct > 0.0 && upper_pct < 100.0 && lower_pct < upper_pct) {
        return Err(DataError::InvalidPercentiles { lower: lower_pct, upper: upper_pct });
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let lo = stats::percentile_sorted(&sorted, lower_pct);
    let hi = stats::percentile_sorted(&sorted, upper_pct);
    for v in values.iter_mut() {
        if *v < lo {
            *v = lo;
        } else if *v > hi {
            *v = hi;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Universe and liquidity
// ---------------------------------------------------------------------------

/// How the universe ranking averages market capitalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum UniverseMode {
    /// Mean over the whole sample. Uses future information.
    #[default]
    FullSample,
    /// Mean over the `window` trading dates strictly before `end`.
    Trailing { end: NaiveDate, window: usize },
}

/// Top-`n` non-ETF tickers by mean market cap, ties broken by ticker.
pub fn select_universe(panel: &PricePanel, n: usize, mode: UniverseMode) -> Result<Vec<String>, DataError> {
    let rows: std::ops::Range<usize> = match mode {
        UniverseMode::FullSample => 0..panel.dates.len(),
        UniverseMode::Trailing { end, window } => {
            let stop = panel.dates.partition_point(|d| *d < end);
            stop.saturating_sub(window)..stop
        }
    };
    let mut ranked: Vec<(f64, &String)> = panel
        .tickers
        .iter()
        .enumerate()
        .filter(|(_, t)| **t != panel.etf_ticker)
        .map(|(j, t)| {
            let vals: Vec<f64> = rows.clone().map(|i| panel.market_cap[[i, j]]).filter(|v| !is_missing(*v)).collect();
            let m = if vals.is_empty() { f64::NEG_INFINITY } else { stats::mean(&vals) };
            (m, t)
        })
        .collect();
    if n > ranked.len() {
        return Err(DataError::NTooLarge { requested: n, available: ranked.len() });
    }
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    Ok(ranked.into_iter().take(n).map(|(_, t)| t.clone()).collect())
}

pub const MDV_WINDOW: usize = 21;

/// Median of `volume × close` over the 21 trading dates strictly before
/// `date`.
pub fn mdv21(panel: &PricePanel, ticker: &str, date: NaiveDate) -> Result<f64, DataError> {
    let j = panel.ticker_index(ticker).ok_or_else(|| DataError::UnknownTicker(ticker.to_string()))?;
    let end = panel.dates.partition_point(|d| *d < date);
    mdv21_at(panel, j, end).ok_or(DataError::InsufficientHistory { ticker: ticker.to_string(), date })
}

/// Same as [`mdv21`] by column index, using the dates at positions
/// `end - 21 .. end`.
pub fn mdv21_at(panel: &PricePanel, column: usize, end: usize) -> Option<f64> {
    if end < MDV_WINDOW {
        return None;
    }
    let mut dv = Vec::with_capacity(MDV_WINDOW);
    for i in end - MDV_WINDOW..end {
        let v = panel.volume[[i, column]] * panel.close[[i, column]];
        if is_missing(v) {
            return None;
        }
        dv.push(v);
    }
    Some(stats::median(&dv))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    const MINI: &str = "date,ticker,open,close,volume,market_cap,sector\n\
        2021-01-04,AAA,10,11,100,1000,Tech\n\
        2021-01-04,BBB,20,19,200,3000,Energy\n\
        2021-01-04,SPY,300,301,1000,100000,ETF\n";

    #[test]
    fn minimal_csv_loads() {
        let p = read_price_csv(MINI.as_bytes(), "US", "SPY").unwrap();
        assert_eq!(p.dates.len(), 1);
        assert_eq!(p.tickers.len(), 3);
        assert_eq!(p.close[[0, 1]], 19.0);
        assert_eq!(p.sector["AAA"], "Tech");
    }

    #[test]
    fn negative_price_names_row() {
        let bad = MINI.replace("20,19,200", "20,-1,200");
        match read_price_csv(bad.as_bytes(), "US", "SPY") {
            Err(DataError::NegativePrice { row, ticker, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(ticker, "BBB");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_column_and_bad_numbers() {
        let no_sector = "date,ticker,open,close,volume,market_cap\n2021-01-04,AAA,1,1,1,1\n";
        assert!(matches!(read_price_csv(no_sector.as_bytes(), "US", "AAA"), Err(DataError::MissingColumn(c)) if c == "sector"));
        let bad = MINI.replace("10,11,100", "10,abc,100");
        assert!(matches!(read_price_csv(bad.as_bytes(), "US", "SPY"), Err(DataError::InvalidField { row: 1, column: "close", .. })));
    }

    #[test]
    fn duplicate_and_non_monotone_rows() {
        let dup = format!("{MINI}2021-01-04,AAA,10,11,100,1000,Tech\n");
        assert!(matches!(read_price_csv(dup.as_bytes(), "US", "SPY"), Err(DataError::DuplicateTickerDate { row: 4, .. })));
        let back = format!("{MINI}2021-01-05,AAA,10,11,100,1000,Tech\n2021-01-01,AAA,10,11,100,1000,Tech\n");
        assert!(matches!(read_price_csv(back.as_bytes(), "US", "SPY"), Err(DataError::NonMonotoneDates { row: 5, .. })));
    }

    #[test]
    fn missing_fields_are_nan_and_etf_must_be_complete() {
        let s = format!("{MINI}2021-01-05,AAA,,11,100,1000,Tech\n2021-01-05,SPY,300,302,1000,100000,ETF\n");
        let p = read_price_csv(s.as_bytes(), "US", "SPY").unwrap();
        assert!(is_missing(p.open[[1, 0]]));
        // BBB absent on the second date
        assert!(is_missing(p.close[[1, 1]]));
        let s = format!("{MINI}2021-01-05,AAA,10,11,100,1000,Tech\n");
        assert!(matches!(read_price_csv(s.as_bytes(), "US", "SPY"), Err(DataError::IncompleteEtf(_))));
    }

    fn two_day_panel(c0: f64, c1: f64, o1: f64) -> PricePanel {
        let dates = vec![d(2021, 1, 4), d(2021, 1, 5)];
        let m = |a: f64, b: f64| Array2::from_shape_vec((2, 2), vec![a, 100.0, b, 100.0]).unwrap();
        PricePanel::new(
            "US",
            dates,
            vec!["AAA".into(), "SPY".into()],
            m(c0, o1),
            m(c0, c1),
            m(1.0, 1.0),
            m(1.0, 1.0),
            BTreeMap::new(),
            "SPY",
        )
        .unwrap()
    }

    #[test]
    fn return_hand_values() {
        let p = two_day_panel(100.0, 110.0, 100.0);
        let pv = compute_returns(&p, ReturnKind::PvClCl).unwrap();
        assert_eq!(pv.dates.len(), 1);
        assert!((pv.values[[0, 0]] - 0.09531017980432493).abs() < 1e-15);
        let p = two_day_panel(100.0, 105.0, 100.0);
        let oc = compute_returns(&p, ReturnKind::OpCl).unwrap();
        assert!((oc.values[[1, 0]] - 0.04879016416943205).abs() < 1e-15);
        let flat = two_day_panel(100.0, 100.0, 100.0);
        assert_eq!(compute_returns(&flat, ReturnKind::PvClCl).unwrap().values[[0, 0]], 0.0);
    }

    #[test]
    fn pvclcl_needs_two_dates() {
        let p = read_price_csv(MINI.as_bytes(), "US", "SPY").unwrap();
        assert!(matches!(compute_returns(&p, ReturnKind::PvClCl), Err(DataError::InsufficientDates { .. })));
    }

    #[test]
    fn excess_subtraction_and_checks() {
        let dates = vec![d(2021, 1, 5)];
        let raw = ReturnPanel {
            market_id: "US".into(),
            kind: ReturnKind::PvClCl,
            excess: false,
            dates: dates.clone(),
            tickers: vec!["A".into(), "B".into()],
            values: Array2::from_shape_vec((1, 2), vec![0.02, 0.09531]).unwrap(),
        };
        let etf = EtfSeries { kind: ReturnKind::PvClCl, dates: dates.clone(), values: vec![0.02] };
        let ex = to_excess(&raw, &etf).unwrap();
        assert!(ex.excess);
        assert_eq!(ex.values[[0, 0]], 0.0);
        let etf2 = EtfSeries { values: vec![0.01], ..etf.clone() };
        assert!((to_excess(&raw, &etf2).unwrap().values[[0, 1]] - 0.08531).abs() < 1e-15);
        let wrong_kind = EtfSeries { kind: ReturnKind::OpCl, ..etf.clone() };
        assert!(matches!(to_excess(&raw, &wrong_kind), Err(DataError::KindMismatch { .. })));
        let wrong_dates = EtfSeries { dates: vec![d(2021, 1, 6)], ..etf };
        assert!(matches!(to_excess(&raw, &wrong_dates), Err(DataError::DateMismatch)));
    }

    #[test]
    fn winsorize_edge_cases() {
        assert_eq!(winsorize_window(&[3.0; 10], 0.5, 99.5).unwrap(), vec![3.0; 10]);
        assert!(matches!(winsorize_window(&[1.0], 0.5, 99.5), Err(DataError::EmptyInput)));
        assert!(winsorize_window(&[1.0, 2.0], 60.0, 40.0).is_err());
        assert!(winsorize_window(&[1.0, 2.0], 0.0, 99.0).is_err());
    }

    #[test]
    fn universe_tie_rule_and_limits() {
        let dates = vec![d(2021, 1, 4)];
        let tickers: Vec<String> = ["B", "A", "C", "SPY"].iter().map(|s| s.to_string()).collect();
        let mcap = Array2::from_shape_vec((1, 4), vec![5.0, 5.0, 1.0, 100.0]).unwrap();
        let ones = Array2::from_elem((1, 4), 1.0);
        let p = PricePanel::new("US", dates, tickers, ones.clone(), ones.clone(), ones, mcap, BTreeMap::new(), "SPY").unwrap();
        assert_eq!(select_universe(&p, 2, UniverseMode::FullSample).unwrap(), vec!["A", "B"]);
        assert_eq!(select_universe(&p, 3, UniverseMode::FullSample).unwrap(), vec!["A", "B", "C"]);
        assert!(matches!(select_universe(&p, 4, UniverseMode::FullSample), Err(DataError::NTooLarge { .. })));
    }

    #[test]
    fn mdv21_hand_values() {
        let n = 25;
        let dates: Vec<NaiveDate> = (0..n).map(|i| d(2021, 1, 1) + chrono::Days::new(i as u64)).collect();
        let mut vol = Array2::from_elem((n, 2), 1.0);
        let close = Array2::from_elem((n, 2), 1.0);
        for i in 0..n {
            vol[[i, 0]] = (i + 1) as f64;
        }
        let p = PricePanel::new("US", dates.clone(), vec!["A".into(), "SPY".into()], close.clone(), close, vol, Array2::from_elem((n, 2), 1.0), BTreeMap::new(), "SPY").unwrap();
        // dates 0..21 carry dollar volumes 1..21
        assert_eq!(mdv21(&p, "A", dates[21]).unwrap(), 11.0);
        assert_eq!(mdv21(&p, "SPY", dates[21]).unwrap(), 1.0);
        assert!(matches!(mdv21(&p, "A", dates[20]), Err(DataError::InsufficientHistory { .. })));
    }
}
