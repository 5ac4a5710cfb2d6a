use std::io::Write;

use chrono::NaiveDate;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::{screening_t, ScreenConfig, ScreenError};
use crate::market_data::{is_missing, winsorize_in_place, ReturnPanel, WINSOR_LOWER, WINSOR_UPPER};

/// Directed edge `source → target`, stored by ticker index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub source: usize,
    pub target: usize,
    pub t_beta: f64,
    /// Inserted by edge randomization rather than by screening.
    pub synthetic: bool,
    /// Perfect fit carrying the sentinel weight.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BipartiteGraph {
    pub source_tickers: Vec<String>,
    pub target_tickers: Vec<String>,
    /// Sorted by `(target, source)`.
    pub edges: Vec<Edge>,
    pub as_of: NaiveDate,
    pub config: ScreenConfig,
}

impl BipartiteGraph {
    pub fn empty(source_tickers: Vec<String>, target_tickers: Vec<String>, as_of: NaiveDate, config: ScreenConfig) -> Self {
        Self { source_tickers, target_tickers, edges: Vec::new(), as_of, config }
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn in_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.target_tickers.len()];
        for e in &self.edges {
            deg[e.target] += 1;
        }
        deg
    }

    /// Edges pointing at `target`, ordered by source index.
    pub fn incident(&self, target: usize) -> &[Edge] {
        let lo = self.edges.partition_point(|e| e.target < target);
        let hi = self.edges.partition_point(|e| e.target <= target);
        &self.edges[lo..hi]
    }

    /// Source indices selected for `target`, ascending.
    pub fn predictors(&self, target: usize) -> Vec<usize> {
        self.incident(target).iter().map(|e| e.source).collect()
    }

    pub fn has_edge(&self, source: usize, target: usize) -> bool {
        self.incident(target).iter().any(|e| e.source == source)
    }

    /// `|targets| × |sources|` matrix of edge weights, zero where absent.
    pub fn biadjacency(&self) -> Array2<f64> {
        let mut b = Array2::zeros((self.target_tickers.len(), self.source_tickers.len()));
        for e in &self.edges {
            b[[e.target, e.source]] = e.t_beta;
        }
        b
    }

    pub(crate) fn sort_edges(&mut self) {
        self.edges.sort_by(|a, b| a.target.cmp(&b.target).then(a.source.cmp(&b.source)));
    }

    /// Checks bipartiteness, ordering and the threshold invariant.
    pub fn validate(&self) -> bool {
        let ordered = self.edges.windows(2).all(|w| (w[0].target, w[0].source) < (w[1].target, w[1].source));
        let in_range = self.edges.iter().all(|e| e.source < self.source_tickers.len() && e.target < self.target_tickers.len());
        ordered && in_range
    }

    /// Edge list CSV: `as_of,source,target,t_beta,synthetic_flag`.
    pub fn write_edges_csv<W: Write>(&self, writer: W, with_header: bool) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        if with_header {
            w.write_record(["as_of", "source", "target", "t_beta", "synthetic_flag"])?;
        }
        let as_of = self.as_of.format("%Y-%m-%d").to_string();
        for e in &self.edges {
            w.write_record([
                as_of.as_str(),
                &self.source_tickers[e.source],
                &self.target_tickers[e.target],
                &format!("{}", e.t_beta),
                if e.synthetic { "1" } else { "0" },
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Dense biadjacency CSV with the target ticker in the first column and
    /// source tickers in the header.
    pub fn write_biadjacency_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        write_matrix_csv(writer, "target", &self.target_tickers, &self.source_tickers, &self.biadjacency())
    }
}

pub fn write_matrix_csv<W: Write>(
    writer: W,
    corner: &str,
    row_labels: &[String],
    col_labels: &[String],
    m: &Array2<f64>,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![corner.to_string()];
    header.extend(col_labels.iter().cloned());
    w.write_record(&header)?;
    for (i, label) in row_labels.iter().enumerate() {
        let mut rec = vec![label.clone()];
        rec.extend(m.row(i).iter().map(|v| format!("{v}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScreenDiagnostics {
    /// Sources with missing data in the window.
    pub skipped_sources: Vec<String>,
    /// Targets with missing data in the window.
    pub skipped_targets: Vec<String>,
    /// Sources that are constant over the window.
    pub constant_sources: Vec<String>,
    pub degenerate_edges: usize,
    pub pairs_tested: usize,
}

/// Window series for one screening pass. Every present series has the same
/// length. `None` marks a stock with missing data inside the window.
#[derive(Debug, Clone)]
pub struct WindowData {
    pub as_of: NaiveDate,
    pub source_tickers: Vec<String>,
    pub target_tickers: Vec<String>,
    pub sources: Vec<Option<Vec<f64>>>,
    pub targets: Vec<Option<Vec<f64>>>,
    /// Per-source threshold overriding `threshold_tau`.
    pub source_tau: Option<Vec<f64>>,
}

/// Pulls the given rows of every column; a column with any missing entry
/// becomes `None`. Present columns are winsorized when asked.
pub fn extract_window(panel: &ReturnPanel, rows: &[usize], winsorize: bool) -> Vec<Option<Vec<f64>>> {
    (0..panel.tickers.len())
        .map(|j| {
            let mut v = Vec::with_capacity(rows.len());
            for &r in rows {
                let x = panel.values[[r, j]];
                if is_missing(x) {
                    return None;
                }
                v.push(x);
            }
            if winsorize && v.len() >= 2 {
                winsorize_in_place(&mut v, WINSOR_LOWER, WINSOR_UPPER).ok()?;
            }
            Some(v)
        })
        .collect()
}

/// Training rows for a graph dated `as_of`: the `w` most recent target rows
/// strictly before `as_of` that have a source pairing, in chronological
/// order, with their paired source rows.
pub fn window_rows(
    target_dates: &[NaiveDate],
    pairing: &[Option<usize>],
    as_of: NaiveDate,
    w: usize,
) -> Result<(Vec<usize>, Vec<usize>), ScreenError> {
    let end = target_dates.partition_point(|d| *d < as_of);
    let mut t_rows = Vec::with_capacity(w);
    let mut s_rows = Vec::with_capacity(w);
    for k in (0..end).rev() {
        if let Some(s) = pairing[k] {
            t_rows.push(k);
            s_rows.push(s);
            if t_rows.len() == w {
                break;
            }
        }
    }
    if t_rows.len() < w {
        return Err(ScreenError::WindowUnavailable { as_of, needed: w, found: t_rows.len() });
    }
    t_rows.reverse();
    s_rows.reverse();
    Ok((t_rows, s_rows))
}

/// Screens all ordered pairs of a prepared window.
pub fn screen_window(data: &WindowData, config: &ScreenConfig) -> Result<(BipartiteGraph, ScreenDiagnostics), ScreenError> {
    config.validate()?;
    let n_src = data.source_tickers.len();
    let mut diag = ScreenDiagnostics::default();

    struct Prepared<'a> {
        raw: &'a [f64],
        centered: Vec<f64>,
        sxx: f64,
    }
    let mut prepared: Vec<Option<Prepared>> = Vec::with_capacity(n_src);
    let mut w_len: Option<usize> = None;
    for (j, s) in data.sources.iter().enumerate() {
        let Some(x) = s else {
            diag.skipped_sources.push(data.source_tickers[j].clone());
            prepared.push(None);
            continue;
        };
        check_len(&mut w_len, x.len())?;
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let centered: Vec<f64> = x.iter().map(|v| v - mean).collect();
        let sxx: f64 = centered.iter().map(|v| v * v).sum();
        let x_sq: f64 = x.iter().map(|v| v * v).sum();
        if sxx == 0.0 || sxx <= 1e-28 * x_sq {
            diag.constant_sources.push(data.source_tickers[j].clone());
            prepared.push(None);
            continue;
        }
        prepared.push(Some(Prepared { raw: x, centered, sxx }));
    }
    for (i, t) in data.targets.iter().enumerate() {
        match t {
            Some(y) => check_len(&mut w_len, y.len())?,
            None => diag.skipped_targets.push(data.target_tickers[i].clone()),
        }
    }
    let w = w_len.unwrap_or(config.window_w);
    if w < 3 {
        return Err(ScreenError::WindowTooShort(w));
    }
    let df = (w - 2) as f64;

    // Per target: (source, t, degenerate) for every testable pair.
    let stats: Vec<Vec<(usize, f64, bool)>> = crate::par::map_indexed(data.targets.len(), |i| {
        let Some(y) = &data.targets[i] else { return Vec::new() };
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let yc: Vec<f64> = y.iter().map(|v| v - mean).collect();
        let syy: f64 = yc.iter().map(|v| v * v).sum();
        let mut out = Vec::with_capacity(prepared.len());
        for (j, p) in prepared.iter().enumerate() {
            let Some(p) = p else { continue };
            let sxy = dot(&p.centered, &yc);
            let beta = sxy / p.sxx;
            let sse = syy - beta * sxy;
            if sse <= 1e-8 * syy || syy == 0.0 {
                // near-perfect fit: the shortcut loses precision, redo exactly
                if let Some((t, deg)) = screening_t(p.raw, y) {
                    out.push((j, t, deg));
                }
            } else {
                let t = beta * p.sxx.sqrt() / (sse / df).sqrt();
                out.push((j, t, false));
            }
        }
        out
    });
    diag.pairs_tested = stats.iter().map(Vec::len).sum();

    let bh_cut = match config.fdr_q {
        Some(q) => Some(bh_threshold(&stats, df, q)),
        None => None,
    };

    let mut edges = Vec::new();
    for (i, row) in stats.iter().enumerate() {
        let mut kept: Vec<Edge> = row
            .iter()
            .filter(|(j, t, _)| {
                let tau = data.source_tau.as_ref().map_or(config.threshold_tau, |v| v[*j]);
                t.abs() > tau
            })
            .filter(|(_, t, _)| bh_cut.is_none_or(|c| t.abs() >= c))
            .filter(|(j, _, _)| !(config.exclude_self_edges && data.source_tickers[*j] == data.target_tickers[i]))
            .map(|&(j, t, deg)| Edge { source: j, target: i, t_beta: t, synthetic: false, degenerate: deg })
            .collect();
        if let Some(cap) = config.max_predictors_n {
            if kept.len() > cap {
                kept.sort_by(|a, b| {
                    b.t_beta
                        .abs()
                        .total_cmp(&a.t_beta.abs())
                        .then_with(|| data.source_tickers[a.source].cmp(&data.source_tickers[b.source]))
                });
                kept.truncate(cap);
                kept.sort_by_key(|e| e.source);
            }
        }
        edges.extend(kept);
    }
    diag.degenerate_edges = edges.iter().filter(|e| e.degenerate).count();
    let graph = BipartiteGraph {
        source_tickers: data.source_tickers.clone(),
        target_tickers: data.target_tickers.clone(),
        edges,
        as_of: data.as_of,
        config: config.clone(),
    };
    Ok((graph, diag))
}

fn check_len(w: &mut Option<usize>, len: usize) -> Result<(), ScreenError> {
    match *w {
        None => {
            *w = Some(len);
            Ok(())
        }
        Some(l) if l == len => Ok(()),
        Some(l) => Err(ScreenError::LengthMismatch(l, len)),
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators in a fixed order keep results bit-stable
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let k = 4 * c;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for k in 4 * chunks..a.len() {
        s += a[k] * b[k];
    }
    s
}

/// Smallest `|t|` admitted by Benjamini-Hochberg at level `q` over all
/// tested pairs; `+∞` when nothing is admitted.
fn bh_threshold(stats: &[Vec<(usize, f64, bool)>], df: f64, q: f64) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    let mut abs_t: Vec<f64> = stats.iter().flatten().map(|(_, t, _)| t.abs()).collect();
    let m = abs_t.len();
    if m == 0 {
        return f64::INFINITY;
    }
    // descending |t| == ascending p
    abs_t.sort_by(|a, b| b.total_cmp(a));
    let mut cut = f64::INFINITY;
    for (k, &t) in abs_t.iter().enumerate() {
        let p = 2.0 * dist.sf(t);
        if p <= q * (k + 1) as f64 / m as f64 {
            cut = t;
        }
    }
    cut
}

/// Builds the graph for prediction date `as_of` from return panels and a
/// target → source row pairing (see [`crate::calendar::pair_sessions`]).
pub fn build_graph(
    source: &ReturnPanel,
    target: &ReturnPanel,
    pairing: &[Option<usize>],
    config: &ScreenConfig,
    as_of: NaiveDate,
) -> Result<(BipartiteGraph, ScreenDiagnostics), ScreenError> {
    config.validate()?;
    let (t_rows, s_rows) = window_rows(&target.dates, pairing, as_of, config.window_w)?;
    let data = WindowData {
        as_of,
        source_tickers: source.tickers.clone(),
        target_tickers: target.tickers.clone(),
        sources: extract_window(source, &s_rows, config.winsorize),
        targets: extract_window(target, &t_rows, config.winsorize),
        source_tau: None,
    };
    screen_window(&data, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::screening::pair_tstat;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn d0() -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 1, 1).unwrap()
    }

    fn window(n_src: usize, n_tgt: usize, w: usize, seed: u64) -> WindowData {
        let mut rng = crate::rng::rng_from_seed(seed);
        let mut g = |_| Some((0..w).map(|_| rng.sample::<f64, _>(StandardNormal)).collect::<Vec<f64>>());
        let sources = (0..n_src).map(&mut g).collect();
        let targets = (0..n_tgt).map(&mut g).collect();
        WindowData {
            as_of: d0(),
            source_tickers: (0..n_src).map(|j| format!("S{j:03}")).collect(),
            target_tickers: (0..n_tgt).map(|i| format!("T{i:03}")).collect(),
            sources,
            targets,
            source_tau: None,
        }
    }

    #[test]
    fn kernel_agrees_with_pair_tstat() {
        let data = window(20, 10, 60, 3);
        let cfg = ScreenConfig { threshold_tau: 1e-9, max_predictors_n: None, ..Default::default() };
        let (g, diag) = screen_window(&data, &cfg).unwrap();
        assert_eq!(diag.pairs_tested, 200);
        assert_eq!(g.n_edges(), 200);
        for e in &g.edges {
            let s = pair_tstat(data.sources[e.source].as_ref().unwrap(), data.targets[e.target].as_ref().unwrap()).unwrap();
            assert!((s.t_beta - e.t_beta).abs() <= 1e-10 * s.t_beta.abs().max(1.0));
        }
    }

    #[test]
    fn infinite_threshold_gives_empty_graph() {
        let data = window(10, 10, 50, 1);
        let cfg = ScreenConfig { threshold_tau: f64::INFINITY, ..Default::default() };
        assert_eq!(screen_window(&data, &cfg).unwrap().0.n_edges(), 0);
    }

    #[test]
    fn cap_keeps_largest_and_missing_is_skipped() {
        let mut data = window(30, 4, 80, 9);
        data.sources[3] = None;
        data.targets[1] = None;
        let loose = ScreenConfig { threshold_tau: 1e-9, max_predictors_n: None, ..Default::default() };
        let capped = ScreenConfig { max_predictors_n: Some(5), ..loose.clone() };
        let (all, diag) = screen_window(&data, &loose).unwrap();
        assert_eq!(diag.skipped_sources, vec!["S003"]);
        assert_eq!(diag.skipped_targets, vec!["T001"]);
        let (top, _) = screen_window(&data, &capped).unwrap();
        assert!(top.validate());
        for i in 0..4 {
            let mut t: Vec<f64> = all.incident(i).iter().map(|e| e.t_beta.abs()).collect();
            t.sort_by(|a, b| b.total_cmp(a));
            let mut kept: Vec<f64> = top.incident(i).iter().map(|e| e.t_beta.abs()).collect();
            kept.sort_by(|a, b| b.total_cmp(a));
            assert_eq!(kept, t.into_iter().take(5).collect::<Vec<_>>());
        }
        assert!(top.incident(1).is_empty());
    }

    #[test]
    fn self_edges_can_be_excluded() {
        let mut data = window(5, 5, 40, 2);
        data.target_tickers = data.source_tickers.clone();
        data.targets = data.sources.clone();
        let cfg = ScreenConfig { threshold_tau: 1e-9, exclude_self_edges: false, ..Default::default() };
        let (g, _) = screen_window(&data, &cfg).unwrap();
        assert_eq!(g.edges.iter().filter(|e| e.degenerate).count(), 5);
        let cfg = ScreenConfig { exclude_self_edges: true, ..cfg };
        let (g, _) = screen_window(&data, &cfg).unwrap();
        assert!(g.edges.iter().all(|e| e.source != e.target));
    }

    #[test]
    fn bh_filter_only_removes_edges() {
        let data = window(40, 40, 100, 5);
        let base = ScreenConfig::default();
        let (plain, _) = screen_window(&data, &base).unwrap();
        let (bh, _) = screen_window(&data, &ScreenConfig { fdr_q: Some(0.05), ..base }).unwrap();
        assert!(bh.n_edges() <= plain.n_edges());
        assert!(bh.edges.iter().all(|e| plain.has_edge(e.source, e.target)));
    }

    #[test]
    fn window_rows_skip_unpaired_dates() {
        let dates: Vec<NaiveDate> = (0..6).map(|i| d0() + chrono::Days::new(i)).collect();
        let pairing = vec![None, Some(0), Some(1), None, Some(2), Some(3)];
        let (t, s) = window_rows(&dates, &pairing, dates[5], 3).unwrap();
        assert_eq!(t, vec![1, 2, 4]);
        assert_eq!(s, vec![0, 1, 2]);
        assert!(matches!(window_rows(&dates, &pairing, dates[4], 3), Err(ScreenError::WindowUnavailable { found: 2, .. })));
    }

    #[test]
    fn csv_exports() {
        let data = window(3, 2, 30, 4);
        let cfg = ScreenConfig { threshold_tau: 1e-9, ..Default::default() };
        let (g, _) = screen_window(&data, &cfg).unwrap();
        let mut buf = Vec::new();
        g.write_edges_csv(&mut buf, true).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("as_of,source,target,t_beta,synthetic_flag\n2020-01-01,S000,T000,"));
        assert_eq!(s.lines().count(), 7);
        let mut buf = Vec::new();
        g.write_biadjacency_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("target,S000,S001,S002\nT000,"));
    }
}
