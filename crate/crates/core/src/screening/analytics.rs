use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{BipartiteGraph, ScreenError};
use crate::stats;

/// 25th, 50th and 75th percentiles of the in-degree over all targets,
/// zero-degree targets included.
pub fn in_degree_percentiles(graph: &BipartiteGraph) -> (f64, f64, f64) {
    let deg: Vec<f64> = graph.in_degrees().into_iter().map(|d| d as f64).collect();
    if deg.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let mut sorted = deg;
    sorted.sort_by(f64::total_cmp);
    (
        stats::percentile_sorted(&sorted, 25.0),
        stats::percentile_sorted(&sorted, 50.0),
        stats::percentile_sorted(&sorted, 75.0),
    )
}

/// Elementwise mean of the biadjacency matrices.
pub fn time_average_biadjacency(graphs: &[BipartiteGraph]) -> Result<Array2<f64>, ScreenError> {
    let first = graphs.first().ok_or(ScreenError::TickerSetMismatch)?;
    let mut acc = Array2::<f64>::zeros((first.target_tickers.len(), first.source_tickers.len()));
    for g in graphs {
        if g.source_tickers != first.source_tickers || g.target_tickers != first.target_tickers {
            return Err(ScreenError::TickerSetMismatch);
        }
        for e in &g.edges {
            acc[[e.target, e.source]] += e.t_beta;
        }
    }
    acc /= graphs.len() as f64;
    Ok(acc)
}

/// Sector-by-sector summary; rows are target sectors, columns source
/// sectors, both sorted by label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorMatrix {
    pub target_sectors: Vec<String>,
    pub source_sectors: Vec<String>,
    pub values: Array2<f64>,
}

/// Median of `|entries|` inside every (target sector, source sector) block
/// of a `targets × sources` matrix.
pub fn sector_block_median_abs(
    matrix: &Array2<f64>,
    source_tickers: &[String],
    target_tickers: &[String],
    source_sector: &BTreeMap<String, String>,
    target_sector: &BTreeMap<String, String>,
) -> Result<SectorMatrix, ScreenError> {
    let label = |t: &String, map: &BTreeMap<String, String>| map.get(t).cloned().ok_or_else(|| ScreenError::UnlabeledTicker(t.clone()));
    let src_lab: Vec<String> = source_tickers.iter().map(|t| label(t, source_sector)).collect::<Result<_, _>>()?;
    let tgt_lab: Vec<String> = target_tickers.iter().map(|t| label(t, target_sector)).collect::<Result<_, _>>()?;
    let mut src_sectors = src_lab.clone();
    src_sectors.sort();
    src_sectors.dedup();
    let mut tgt_sectors = tgt_lab.clone();
    tgt_sectors.sort();
    tgt_sectors.dedup();
    let mut blocks: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); src_sectors.len()]; tgt_sectors.len()];
    let si: Vec<usize> = src_lab.iter().map(|s| src_sectors.binary_search(s).unwrap()).collect();
    for (i, tl) in tgt_lab.iter().enumerate() {
        let r = tgt_sectors.binary_search(tl).unwrap();
        for (j, &c) in si.iter().enumerate() {
            blocks[r][c].push(matrix[[i, j]].abs());
        }
    }
    let mut values = Array2::from_elem((tgt_sectors.len(), src_sectors.len()), f64::NAN);
    for (r, row) in blocks.iter().enumerate() {
        for (c, block) in row.iter().enumerate() {
            values[[r, c]] = stats::median(block);
        }
    }
    Ok(SectorMatrix { target_sectors: tgt_sectors, source_sectors: src_sectors, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::screening::{Edge, ScreenConfig};
    use chrono::NaiveDate;

    fn graph(n_src: usize, n_tgt: usize, edges: &[(usize, usize, f64)]) -> BipartiteGraph {
        let mut g = BipartiteGraph::empty(
            (0..n_src).map(|j| format!("S{j}")).collect(),
            (0..n_tgt).map(|i| format!("T{i}")).collect(),
            NaiveDate::from_ymd_opt(2021, 1, 1).unwrap(),
            ScreenConfig::default(),
        );
        g.edges = edges.iter().map(|&(s, t, w)| Edge { source: s, target: t, t_beta: w, synthetic: false, degenerate: false }).collect();
        g.sort_edges();
        g
    }

    #[test]
    fn in_degree_simple_cases() {
        assert_eq!(in_degree_percentiles(&graph(5, 10, &[])), (0.0, 0.0, 0.0));
        let mut e = Vec::new();
        for t in 0..4 {
            for s in 0..3 {
                e.push((s, t, 3.0));
            }
        }
        assert_eq!(in_degree_percentiles(&graph(3, 4, &e)), (3.0, 3.0, 3.0));
    }

    #[test]
    fn average_of_disjoint_graphs() {
        let a = graph(2, 2, &[(0, 0, 4.0)]);
        let b = graph(2, 2, &[(1, 1, 4.0)]);
        let m = time_average_biadjacency(&[a.clone(), b]).unwrap();
        assert_eq!(m[[0, 0]], 2.0);
        assert_eq!(m[[1, 1]], 2.0);
        assert_eq!(m[[0, 1]], 0.0);
        assert_eq!(time_average_biadjacency(std::slice::from_ref(&a)).unwrap(), a.biadjacency());
        let c = graph(3, 2, &[]);
        assert_eq!(time_average_biadjacency(&[a, c]), Err(ScreenError::TickerSetMismatch));
    }

    #[test]
    fn sector_medians() {
        let m = Array2::from_shape_vec((1, 3), vec![-3.0, 1.0, 2.0]).unwrap();
        let src: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
        let tgt: Vec<String> = vec!["x".into()];
        let ss: BTreeMap<String, String> = src.iter().map(|t| (t.clone(), "S".to_string())).collect();
        let ts: BTreeMap<String, String> = [("x".to_string(), "T".to_string())].into();
        let out = sector_block_median_abs(&m, &src, &tgt, &ss, &ts).unwrap();
        assert_eq!(out.values[[0, 0]], 2.0);
        let mut missing = ss.clone();
        missing.remove("b");
        assert_eq!(sector_block_median_abs(&m, &src, &tgt, &missing, &ts), Err(ScreenError::UnlabeledTicker("b".into())));
    }
}
