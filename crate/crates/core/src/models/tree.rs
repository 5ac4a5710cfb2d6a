//! Regression trees and the exact second-order split finder shared by
//! XGB, random forests and AdaBoost.
//!
//! Each sample carries a gradient `g` and hessian `h`. A split of a node with
//! sums `(G, H)` into `(G_L, H_L)` and `(G_R, H_R)` has gain
//!
//! ```text
//! ½ [ G_L²/(H_L+λ) + G_R²/(H_R+λ) − G²/(H+λ) ] − γ
//! ```
//!
//! and a leaf predicts `−G/(H+λ)`. With `g = −w·y`, `h = w` and `λ = γ = 0`
//! this is weighted least-squares CART.
//!
//! Thresholds are midpoints between consecutive distinct values and samples
//! with `x < threshold` go left. Among equal gains the lowest feature index
//! wins, then the lowest threshold.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf { value: f64 },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

/// Nodes in creation order; the root is node 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(value: f64) -> Self {
        Self { nodes: vec![Node::Leaf { value }] }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut k = 0;
        loop {
            match &self.nodes[k] {
                Node::Leaf { value } => return *value,
                Node::Split { feature, threshold, left, right } => {
                    k = if x[*feature] < *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, k: usize) -> usize {
            match &t.nodes[k] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
            }
        }
        go(self, 0)
    }

    pub fn scale_leaves(&mut self, factor: f64) {
        for n in &mut self.nodes {
            if let Node::Leaf { value } = n {
                *value *= factor;
            }
        }
    }
}

/// Midpoint threshold strictly above `lo` and at most `hi`.
pub(crate) fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo + (hi - lo) / 2.0;
    if m > lo {
        m
    } else {
        hi
    }
}

/// Column-major copy of the design with per-feature sort orders.
pub(crate) struct Presorted {
    pub cols: Vec<Vec<f64>>,
    pub order: Vec<Vec<u32>>,
}

impl Presorted {
    pub fn new(x: ndarray::ArrayView2<f64>) -> Self {
        let (d, n) = x.dim();
        let cols: Vec<Vec<f64>> = (0..n).map(|j| x.column(j).to_vec()).collect();
        let order = cols
            .iter()
            .map(|c| {
                let mut o: Vec<u32> = (0..d as u32).collect();
                o.sort_by(|&a, &b| c[a as usize].total_cmp(&c[b as usize]).then(a.cmp(&b)));
                o
            })
            .collect();
        Self { cols, order }
    }

    pub fn n_rows(&self) -> usize {
        self.order.first().map_or(0, |o| o.len())
    }

    pub fn n_features(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.cols.iter().map(|c| c[i]).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ExactParams {
    pub max_depth: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub min_child_weight: f64,
    pub min_samples_leaf: usize,
    /// Features drawn per node; `None` means all.
    pub mtry: Option<usize>,
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

struct Open {
    node: usize,
    depth: usize,
    g: f64,
    h: f64,
    count: usize,
    scale: f64,
    features: Option<Vec<bool>>,
}

const NONE: u32 = u32::MAX;

/// Level-wise exact tree growth. Samples with `h == 0` are ignored.
pub(crate) fn build_exact<R: Rng>(pre: &Presorted, g: &[f64], h: &[f64], p: &ExactParams, mut rng: Option<&mut R>) -> Tree {
    let d = pre.n_rows();
    let n_feat = pre.n_features();
    let leaf_value = |gs: f64, hs: f64| if hs + p.lambda > 0.0 { -gs / (hs + p.lambda) } else { 0.0 };
    let mut slot_of: Vec<u32> = (0..d).map(|i| if h[i] > 0.0 { 0 } else { NONE }).collect();
    let mut nodes = vec![Node::Leaf { value: 0.0 }];
    let (mut g0, mut h0, mut c0, mut s0) = (0.0, 0.0, 0usize, 0.0);
    for i in 0..d {
        if h[i] > 0.0 {
            g0 += g[i];
            h0 += h[i];
            c0 += 1;
            s0 += g[i] * g[i] / h[i];
        }
    }
    nodes[0] = Node::Leaf { value: leaf_value(g0, h0) };
    let draw_features = |rng: &mut Option<&mut R>| -> Option<Vec<bool>> {
        match (p.mtry, rng.as_deref_mut()) {
            (Some(m), Some(r)) if m < n_feat => {
                let mut mask = vec![false; n_feat];
                for j in sample(r, n_feat, m.max(1)).iter() {
                    mask[j] = true;
                }
                Some(mask)
            }
            _ => None,
        }
    };
    let mut open = vec![Open { node: 0, depth: 0, g: g0, h: h0, count: c0, scale: s0, features: draw_features(&mut rng) }];
    if c0 == 0 {
        return Tree { nodes };
    }

    while !open.is_empty() {
        let k = open.len();
        let mut best: Vec<Option<Candidate>> = vec![None; k];
        let splittable: Vec<bool> = open.iter().map(|o| o.depth < p.max_depth && o.count >= 2 * p.min_samples_leaf.max(1)).collect();
        if splittable.iter().any(|&s| s) {
            let mut gl = vec![0.0; k];
            let mut hl = vec![0.0; k];
            let mut cl = vec![0usize; k];
            let mut last = vec![f64::NAN; k];
            for f in 0..n_feat {
                let col = &pre.cols[f];
                gl.iter_mut().for_each(|v| *v = 0.0);
                hl.iter_mut().for_each(|v| *v = 0.0);
                cl.iter_mut().for_each(|v| *v = 0);
                for &i in &pre.order[f] {
                    let i = i as usize;
                    let s = slot_of[i];
                    if s == NONE {
                        continue;
                    }
                    let s = s as usize;
                    let o = &open[s];
                    if !splittable[s] || o.features.as_ref().is_some_and(|m| !m[f]) {
                        continue;
                    }
                    let v = col[i];
                    if cl[s] > 0 && v > last[s] {
                        let (gr, hr, cr) = (o.g - gl[s], o.h - hl[s], o.count - cl[s]);
                        if cl[s] >= p.min_samples_leaf && cr >= p.min_samples_leaf && hl[s] >= p.min_child_weight && hr >= p.min_child_weight {
                            let gain = 0.5 * (gl[s] * gl[s] / (hl[s] + p.lambda) + gr * gr / (hr + p.lambda) - o.g * o.g / (o.h + p.lambda)) - p.gamma;
                            let floor = 1e-13 * o.scale;
                            if gain > floor && best[s].is_none_or(|b| gain > b.gain) {
                                best[s] = Some(Candidate { gain, feature: f, threshold: midpoint(last[s], v) });
                            }
                        }
                    }
                    gl[s] += g[i];
                    hl[s] += h[i];
                    cl[s] += 1;
                    last[s] = v;
                }
            }
        }
        // materialize splits in slot order
        let mut child_slot = vec![(NONE, NONE); k];
        let mut next: Vec<Open> = Vec::new();
        for (s, o) in open.iter().enumerate() {
            if let Some(c) = best[s] {
                let left = nodes.len();
                nodes.push(Node::Leaf { value: 0.0 });
                nodes.push(Node::Leaf { value: 0.0 });
                nodes[o.node] = Node::Split { feature: c.feature, threshold: c.threshold, left, right: left + 1 };
                child_slot[s] = (next.len() as u32, next.len() as u32 + 1);
                for side in 0..2 {
                    next.push(Open { node: left + side, depth: o.depth + 1, g: 0.0, h: 0.0, count: 0, scale: 0.0, features: None });
                }
            }
        }
        if next.is_empty() {
            break;
        }
        for i in 0..d {
            let s = slot_of[i];
            if s == NONE {
                continue;
            }
            let s = s as usize;
            let (l, r) = child_slot[s];
            if l == NONE {
                slot_of[i] = NONE;
                continue;
            }
            let Node::Split { feature, threshold, .. } = nodes[open[s].node] else { unreachable!() };
            let c = if pre.cols[feature][i] < threshold { l } else { r };
            slot_of[i] = c;
            let o = &mut next[c as usize];
            o.g += g[i];
            o.h += h[i];
            o.count += 1;
            o.scale += g[i] * g[i] / h[i];
        }
        for o in &mut next {
            nodes[o.node] = Node::Leaf { value: leaf_value(o.g, o.h) };
            o.features = draw_features(&mut rng);
        }
        open = next;
    }
    Tree { nodes }
}
