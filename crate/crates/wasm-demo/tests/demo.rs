use crossmarket_wasm::{heatmap, pnl, randomization, DemoSpec};

fn spec() -> DemoSpec {
    DemoSpec { n_stocks: 8, edge_density: 0.2, tau: 2.0, seed: 1 }
}

#[test]
fn heatmap_covers_planted_cells() {
    let h = heatmap(spec()).unwrap();
    assert_eq!(h.matrix.len(), 8);
    assert!(h.matrix.iter().all(|r| r.len() == 8));
    assert!(!h.planted.is_empty());
    let planted_mean: f64 = h.planted.iter().map(|&(i, j)| h.matrix[i][j].abs()).sum::<f64>() / h.planted.len() as f64;
    let all_mean: f64 = h.matrix.iter().flatten().map(|v| v.abs()).sum::<f64>() / 64.0;
    assert!(planted_mean > all_mean);
    assert!(h.recall.unwrap() > 0.5);
}

#[test]
fn pnl_curves_per_model() {
    let p = pnl(spec(), "OLS,RIDGE").unwrap();
    assert_eq!(p.curves.len(), 2);
    assert!(p.curves.iter().all(|c| c.cum_pnl.len() == p.dates.len()));
    assert!(pnl(spec(), "").is_err());
    assert!(pnl(spec(), "OLS,NOPE").is_err());
}

#[test]
fn randomization_endpoints() {
    let pts = randomization(spec(), 3).unwrap();
    assert_eq!(pts.iter().map(|p| p.fraction).collect::<Vec<_>>(), vec![0.0, 0.5, 1.0]);
    assert!(pts[0].sr.unwrap() > pts[2].sr.unwrap_or(f64::NEG_INFINITY));
    assert!(randomization(DemoSpec { n_stocks: 100, ..spec() }, 3).is_err());
}
