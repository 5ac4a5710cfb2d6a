//! AdaBoost.R2 with linear loss and CART base learners trained on weighted
//! bootstrap resamples. Predictions are the weighted median of the learners.

use ndarray::ArrayView2;
use rand::distr::{weighted::WeightedIndex, Distribution};
use serde::{Deserialize, Serialize};

use super::tree::{build_exact, ExactParams, Presorted, Tree};
use super::{FitDiagnostics, ModelError, ModelState, WeightedTrees};
use crate::rng::SeedStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaBoostParams {
    pub n_estimators: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
}

impl Default for AdaBoostParams {
    fn default() -> Self {
        Self { n_estimators: 100, learning_rate: 0.1, max_depth: 5 }
    }
}

impl AdaBoostParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n_estimators == 0 || !(self.learning_rate > 0.0) || self.max_depth == 0 {
            return Err(ModelError::InvalidHyperparameter(format!("{self:?}")));
        }
        Ok(())
    }
}

pub(super) fn fit(x: ArrayView2<f64>, y: &[f64], p: &AdaBoostParams, seed: u64) -> (ModelState, FitDiagnostics) {
    let d = y.len();
    let pre = Presorted::new(x);
    let rows: Vec<Vec<f64>> = (0..d).map(|i| pre.row(i)).collect();
    let params = ExactParams { max_depth: p.max_depth, lambda: 0.0, gamma: 0.0, min_child_weight: 0.0, min_samples_leaf: 1, mtry: None };
    let streams = SeedStream::new(seed);
    let mut sample_w = vec![1.0 / d as f64; d];
    let mut trees: Vec<Tree> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    let mut rounds = 0;
    for m in 0..p.n_estimators {
        rounds = m + 1;
        let mut rng = streams.rng(&["adaboost", &m.to_string()]);
        let Ok(dist) = WeightedIndex::new(&sample_w) else { break };
        let mut counts = vec![0.0; d];
        for _ in 0..d {
            counts[dist.sample(&mut rng)] += 1.0;
        }
        let g: Vec<f64> = counts.iter().zip(y).map(|(c, v)| -c * v).collect();
        let tree = build_exact::<rand_chacha::ChaCha8Rng>(&pre, &g, &counts, &params, None);
        let err: Vec<f64> = rows.iter().zip(y).map(|(r, v)| (tree.predict(r) - v).abs()).collect();
        let max_err = err.iter().copied().fold(0.0, f64::max);
        if max_err == 0.0 {
            trees.push(tree);
            weights.push(1.0);
            break;
        }
        let avg_loss: f64 = err.iter().zip(&sample_w).map(|(e, w)| w * e / max_err).sum();
        if avg_loss <= 0.0 {
            trees.push(tree);
            weights.push(1.0);
            break;
        }
        if avg_loss >= 0.5 {
            if trees.is_empty() {
                trees.push(tree);
                weights.push(1.0);
            }
            break;
        }
        let beta = avg_loss / (1.0 - avg_loss);
        trees.push(tree);
        weights.push(p.learning_rate * (1.0 / beta).ln());
        if m + 1 == p.n_estimators {
            break;
        }
        for (w, e) in sample_w.iter_mut().zip(&err) {
            *w *= beta.powf((1.0 - e / max_err) * p.learning_rate);
        }
        let total: f64 = sample_w.iter().sum();
        if !(total > 0.0) {
            break;
        }
        sample_w.iter_mut().for_each(|w| *w /= total);
    }
    (ModelState::AdaBoost(WeightedTrees { trees, weights }), FitDiagnostics { iterations: rounds, converged: true, loss_trace: Vec::new() })
}
