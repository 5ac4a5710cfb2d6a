use ndarray::ArrayView2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tree::{build_exact, ExactParams, Presorted};
use super::{FitDiagnostics, ModelError, ModelState};
use crate::rng::SeedStream;

/// Bagged CART regression trees with per-node feature subsampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RfParams {
    pub n_estimators: usize,
    pub max_depth: usize,
    /// Features tried per node; `None` means `max(1, n_features / 3)`.
    pub max_features: Option<usize>,
    pub min_samples_leaf: usize,
}

impl Default for RfParams {
    fn default() -> Self {
        Self { n_estimators: 100, max_depth: 10, max_features: None, min_samples_leaf: 1 }
    }
}

impl RfParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n_estimators == 0 || self.max_depth == 0 || self.min_samples_leaf == 0 || self.max_features == Some(0) {
            return Err(ModelError::InvalidHyperparameter(format!("{self:?}")));
        }
        Ok(())
    }
}

pub(super) fn fit(x: ArrayView2<f64>, y: &[f64], p: &RfParams, seed: u64) -> (ModelState, FitDiagnostics) {
    let (d, n) = x.dim();
    let pre = Presorted::new(x);
    let mtry = p.max_features.unwrap_or((n / 3).max(1)).min(n);
    let params = ExactParams {
        max_depth: p.max_depth,
        lambda: 0.0,
        gamma: 0.0,
        min_child_weight: 0.0,
        min_samples_leaf: p.min_samples_leaf,
        mtry: Some(mtry),
    };
    let streams = SeedStream::new(seed);
    let trees = (0..p.n_estimators)
        .map(|t| {
            let mut rng = streams.rng(&["rf", &t.to_string()]);
            let mut w = vec![0.0; d];
            for _ in 0..d {
                w[rng.random_range(0..d)] += 1.0;
            }
            let g: Vec<f64> = w.iter().zip(y).map(|(wi, yi)| -wi * yi).collect();
            build_exact(&pre, &g, &w, &params, Some(&mut rng))
        })
        .collect();
    (ModelState::Forest(trees), FitDiagnostics { iterations: p.n_estimators, converged: true, loss_trace: Vec::new() })
}
