//! Histogram gradient boosting with leaf-wise growth.
//!
//! Features are bucketed into at most `max_bins` bins from training-window
//! quantiles. Each tree repeatedly splits the leaf with the largest gain until
//! it has `num_leaves` leaves or no admissible split remains.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::tree::{midpoint, Node, Tree};
use super::{rss, BoostedState, FitDiagnostics, ModelError, ModelState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HgbtParams {
    pub num_leaves: usize,
    pub learning_rate: f64,
    pub n_estimators: usize,
    pub max_bins: usize,
    pub min_data_in_leaf: usize,
    pub reg_lambda: f64,
    /// Optional depth limit; `None` grows by leaf count alone.
    pub max_depth: Option<usize>,
}

impl Default for HgbtParams {
    fn default() -> Self {
        Self { num_leaves: 31, learning_rate: 0.1, n_estimators: 100, max_bins: 256, min_data_in_leaf: 20, reg_lambda: 0.0, max_depth: None }
    }
}

impl HgbtParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.num_leaves < 2 || self.n_estimators == 0 || !(self.learning_rate > 0.0) || self.max_bins < 2 || self.max_bins > 65_536 || self.min_data_in_leaf == 0 || self.reg_lambda < 0.0 {
            return Err(ModelError::InvalidHyperparameter(format!("{self:?}")));
        }
        Ok(())
    }
}

/// Per-feature bin boundaries; bin `b` holds values in
/// `[edges[b-1], edges[b])`.
struct Binned {
    edges: Vec<Vec<f64>>,
    bins: Vec<Vec<u16>>,
}

fn bin_features(x: ArrayView2<f64>, max_bins: usize) -> Binned {
    let mut edges = Vec::with_capacity(x.ncols());
    let mut bins = Vec::with_capacity(x.ncols());
    for col in x.columns() {
        let mut distinct: Vec<f64> = col.to_vec();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        let e: Vec<f64> = if distinct.len() <= max_bins {
            distinct.windows(2).map(|w| midpoint(w[0], w[1])).collect()
        } else {
            let mut sorted: Vec<f64> = col.to_vec();
            sorted.sort_by(f64::total_cmp);
            let n = sorted.len();
            let mut e = Vec::with_capacity(max_bins - 1);
            for b in 1..max_bins {
                let pos = b * n / max_bins;
                let (lo, hi) = (sorted[pos - 1], sorted[pos]);
                if hi > lo {
                    let m = midpoint(lo, hi);
                    if e.last().is_none_or(|&l| m > l) {
                        e.push(m);
                    }
                }
            }
            e
        };
        bins.push(col.iter().map(|&v| e.partition_point(|&t| t <= v) as u16).collect());
        edges.push(e);
    }
    Binned { edges, bins }
}

struct Leaf {
    node: usize,
    depth: usize,
    rows: Vec<usize>,
    best: Option<(f64, usize, usize)>,
}

fn best_split(b: &Binned, rows: &[usize], g: &[f64], gs: f64, hs: f64, depth: usize, p: &HgbtParams) -> Option<(f64, usize, usize)> {
    if rows.len() < 2 * p.min_data_in_leaf || p.max_depth.is_some_and(|m| depth >= m) {
        return None;
    }
    let parent = gs * gs / (hs + p.reg_lambda);
    let mut best: Option<(f64, usize, usize)> = None;
    let scale: f64 = rows.iter().map(|&i| g[i] * g[i]).sum();
    for (f, e) in b.edges.iter().enumerate() {
        let nb = e.len() + 1;
        if nb < 2 {
            continue;
        }
        let mut hist_g = vec![0.0; nb];
        let mut hist_c = vec![0usize; nb];
        for &i in rows {
            let k = b.bins[f][i] as usize;
            hist_g[k] += g[i];
            hist_c[k] += 1;
        }
        let (mut gl, mut cl) = (0.0, 0usize);
        for k in 0..nb - 1 {
            gl += hist_g[k];
            cl += hist_c[k];
            let cr = rows.len() - cl;
            if cl < p.min_data_in_leaf {
                continue;
            }
            if cr < p.min_data_in_leaf {
                break;
            }
            if hist_c[k + 1..].iter().all(|&c| c == 0) {
                break;
            }
            let (hl, hr) = (cl as f64, cr as f64);
            let gr = gs - gl;
            let gain = 0.5 * (gl * gl / (hl + p.reg_lambda) + gr * gr / (hr + p.reg_lambda) - parent);
            if gain > 1e-13 * scale && best.is_none_or(|(bg, _, _)| gain > bg) {
                best = Some((gain, f, k));
            }
        }
    }
    best
}

fn grow_tree(b: &Binned, g: &[f64], p: &HgbtParams) -> Tree {
    let rows: Vec<usize> = (0..g.len()).collect();
    let gs: f64 = g.iter().sum();
    let hs = g.len() as f64;
    let leaf_value = |gs: f64, hs: f64| -gs / (hs + p.reg_lambda);
    let mut nodes = vec![Node::Leaf { value: leaf_value(gs, hs) }];
    let best = best_split(b, &rows, g, gs, hs, 0, p);
    let mut leaves = vec![Leaf { node: 0, depth: 0, rows, best }];
    let mut n_leaves = 1;
    while n_leaves < p.num_leaves {
        // highest gain, earliest leaf on ties
        let mut pick: Option<usize> = None;
        for (k, l) in leaves.iter().enumerate() {
            if let Some((gain, _, _)) = l.best {
                if pick.is_none_or(|q| gain > leaves[q].best.unwrap().0) {
                    pick = Some(k);
                }
            }
        }
        let Some(k) = pick else { break };
        let leaf = leaves.remove(k);
        let (_, f, bin) = leaf.best.unwrap();
        let threshold = b.edges[f][bin];
        let (lrows, rrows): (Vec<usize>, Vec<usize>) = leaf.rows.iter().partition(|&&i| (b.bins[f][i] as usize) <= bin);
        let left = nodes.len();
        nodes[leaf.node] = Node::Split { feature: f, threshold, left, right: left + 1 };
        for (side, rows) in [lrows, rrows].into_iter().enumerate() {
            let gs: f64 = rows.iter().map(|&i| g[i]).sum();
            let hs = rows.len() as f64;
            nodes.push(Node::Leaf { value: leaf_value(gs, hs) });
            let best = best_split(b, &rows, g, gs, hs, leaf.depth + 1, p);
            leaves.push(Leaf { node: left + side, depth: leaf.depth + 1, rows, best });
        }
        n_leaves += 1;
    }
    Tree { nodes }
}

pub(super) fn fit(x: ArrayView2<f64>, y: &[f64], p: &HgbtParams) -> (ModelState, FitDiagnostics) {
    let d = y.len();
    let binned = bin_features(x, p.max_bins);
    let base = y.iter().sum::<f64>() / d as f64;
    let mut pred = vec![base; d];
    let rows: Vec<Vec<f64>> = (0..d).map(|i| x.row(i).to_vec()).collect();
    let mut trees = Vec::with_capacity(p.n_estimators);
    let mut trace = Vec::with_capacity(p.n_estimators);
    for _ in 0..p.n_estimators {
        let g: Vec<f64> = pred.iter().zip(y).map(|(f, v)| f - v).collect();
        let tree = grow_tree(&binned, &g, p);
        for (pi, row) in pred.iter_mut().zip(&rows) {
            *pi += p.learning_rate * tree.predict(row);
        }
        trees.push(tree);
        trace.push(rss(&pred, y));
    }
    (
        ModelState::Boosted(BoostedState { base, learning_rate: p.learning_rate, trees }),
        FitDiagnostics { iterations: p.n_estimators, converged: true, loss_trace: trace },
    )
}
