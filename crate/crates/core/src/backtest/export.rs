use std::fs;
use std::io::Write;
use std::path::Path;

use super::{BacktestReport, PnlSeries};

/// `date,daily_pnl,cum_pnl` for one (model, quantile) series.
pub fn write_quantile_csv<W: Write>(report: &BacktestReport, series: &PnlSeries, writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["date", "daily_pnl", "cum_pnl"])?;
    for (k, d) in report.dates.iter().enumerate() {
        w.write_record([d.to_string(), series.daily_pnl[k].to_string(), series.cum_pnl[k].to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `model,quantile,sr,total_pnl,n_days`; an undefined SR is written as `NaN`.
pub fn write_summary_csv<W: Write>(report: &BacktestReport, writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["model", "quantile", "sr", "total_pnl", "n_days"])?;
    for (m, label) in report.model_labels.iter().enumerate() {
        for (q, s) in report.series[m].iter().enumerate() {
            let sr = s.sr.map_or_else(|| "NaN".to_string(), |v| v.to_string());
            w.write_record([label.clone(), format!("qr{}", q + 1), sr, s.total().to_string(), s.daily_pnl.len().to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `summary.csv`, one `pnl/<model>_qr<k>.csv` per series and
/// `rebuilds.csv` with per-rebuild diagnostics.
pub fn write_report(report: &BacktestReport, dir: &Path) -> std::io::Result<()> {
    let pnl_dir = dir.join("pnl");
    fs::create_dir_all(&pnl_dir)?;
    write_summary_csv(report, fs::File::create(dir.join("summary.csv"))?).map_err(std::io::Error::other)?;
    for (m, label) in report.model_labels.iter().enumerate() {
        for (q, s) in report.series[m].iter().enumerate() {
            let f = fs::File::create(pnl_dir.join(series_file_name(label, q + 1)))?;
            write_quantile_csv(report, s, f).map_err(std::io::Error::other)?;
        }
    }
    let mut w = csv::Writer::from_path(dir.join("rebuilds.csv")).map_err(std::io::Error::other)?;
    w.write_record(["date", "n_edges", "skipped_targets", "no_edge_targets", "fit_failures", "nonconverged"]).map_err(std::io::Error::other)?;
    for r in &report.rebuilds {
        w.write_record([
            r.date.to_string(),
            r.n_edges.to_string(),
            r.skipped_targets.len().to_string(),
            r.no_edge_targets.to_string(),
            r.fit_failures.len().to_string(),
            r.nonconverged.to_string(),
        ])
        .map_err(std::io::Error::other)?;
    }
    w.flush()
}

/// File name of the series for model `label` and 1-based quantile `q`
/// under `pnl/`.
pub fn series_file_name(label: &str, q: usize) -> String {
    format!("{}_qr{q}.csv", sanitize(label))
}

fn sanitize(label: &str) -> String {
    label.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' }).collect()
}
