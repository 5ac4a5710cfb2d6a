use ndarray::ArrayView2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::{build_exact, ExactParams, Presorted};
use super::{rss, BoostedState, FitDiagnostics, ModelError, ModelState};

/// Exact greedy gradient boosting on squared loss with
/// `Ω(f) = γM + ½λ‖w‖²` per tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct XgbParams {
    pub max_depth: usize,
    pub learning_rate: f64,
    pub n_estimators: usize,
    pub reg_lambda: f64,
    pub gamma: f64,
    pub min_child_weight: f64,
}

impl Default for XgbParams {
    fn default() -> Self {
        Self { max_depth: 6, learning_rate: 0.1, n_estimators: 100, reg_lambda: 1.0, gamma: 0.0, min_child_weight: 1.0 }
    }
}

impl XgbParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n_estimators == 0 || !(self.learning_rate > 0.0) || self.reg_lambda < 0.0 || self.gamma < 0.0 || self.min_child_weight < 0.0 {
            return Err(ModelError::InvalidHyperparameter(format!("{self:?}")));
        }
        Ok(())
    }
}

pub(super) fn fit(x: ArrayView2<f64>, y: &[f64], p: &XgbParams) -> (ModelState, FitDiagnostics) {
    let d = y.len();
    let pre = Presorted::new(x);
    let base = y.iter().sum::<f64>() / d as f64;
    let mut pred = vec![base; d];
    let ones = vec![1.0; d];
    let params = ExactParams {
        max_depth: p.max_depth,
        lambda: p.reg_lambda,
        gamma: p.gamma,
        min_child_weight: p.min_child_weight,
        min_samples_leaf: 1,
        mtry: None,
    };
    let mut trees = Vec::with_capacity(p.n_estimators);
    let mut trace = Vec::with_capacity(p.n_estimators);
    let rows: Vec<Vec<f64>> = (0..d).map(|i| pre.row(i)).collect();
    for _ in 0..p.n_estimators {
        let g: Vec<f64> = pred.iter().zip(y).map(|(f, v)| f - v).collect();
        let tree = build_exact::<ChaCha8Rng>(&pre, &g, &ones, &params, None);
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
