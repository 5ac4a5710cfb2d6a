//! Per-target forecasting models.
//!
//! Every method fits `y ≈ F(X)` on one target stock's training window and
//! returns a [`FittedModel`] whose [`FittedModel::predict`] maps a feature
//! vector to a one-day-ahead return.
//!
//! Penalized linear models and the SVR work on z-scored features (mean and
//! population standard deviation of the training window); OLS and the tree
//! methods see raw features. Standardization statistics are stored with the
//! model and applied inside `predict`.

mod adaboost;
mod forest;
mod hgbt;
mod lasso;
mod linear;
pub mod objectives;
mod svr;
pub mod tree;
mod xgb;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::SeedStream;
use crate::stats;

pub use adaboost::AdaBoostParams;
pub use forest::RfParams;
pub use hgbt::HgbtParams;
pub use lasso::LassoParams;
pub use linear::RidgeParams;
pub use svr::{SvrParams, SvrState};
pub use tree::{Node, Tree};
pub use xgb::XgbParams;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid training set: {0}")]
    InvalidTrainSet(String),
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),
    #[error("feature vector has {got} entries, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("ensemble needs exactly {expected} base predictions, got {got}")]
    WrongArity { expected: usize, got: usize },
    #[error("linear system is singular")]
    SingularSystem,
    #[error("solver stopped after {iterations} iterations without meeting its tolerance")]
    NonConvergence { iterations: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "OLS")]
    Ols,
    #[serde(rename = "LASSO")]
    Lasso,
    #[serde(rename = "RIDGE")]
    Ridge,
    #[serde(rename = "SVR")]
    Svr,
    #[serde(rename = "XGB")]
    Xgb,
    #[serde(rename = "HGBT")]
    Hgbt,
    #[serde(rename = "RF")]
    Rf,
    #[serde(rename = "ADABOOST")]
    AdaBoost,
    #[serde(rename = "ENS_AVG")]
    EnsAvg,
    #[serde(rename = "ENS_MED")]
    EnsMed,
}

impl Method {
    pub const ALL: [Method; 10] = [
        Method::Ols,
        Method::Lasso,
        Method::Ridge,
        Method::Svr,
        Method::Xgb,
        Method::Hgbt,
        Method::Rf,
        Method::AdaBoost,
        Method::EnsAvg,
        Method::EnsMed,
    ];

    /// The eight non-ensemble methods, in the order ensembles consume them.
    pub const BASE: [Method; 8] = [
        Method::Ols,
        Method::Lasso,
        Method::Ridge,
        Method::Svr,
        Method::Xgb,
        Method::Hgbt,
        Method::Rf,
        Method::AdaBoost,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Method::Ols => "OLS",
            Method::Lasso => "LASSO",
            Method::Ridge => "RIDGE",
            Method::Svr => "SVR",
            Method::Xgb => "XGB",
            Method::Hgbt => "HGBT",
            Method::Rf => "RF",
            Method::AdaBoost => "ADABOOST",
            Method::EnsAvg => "ENS_AVG",
            Method::EnsMed => "ENS_MED",
        }
    }

    pub fn is_ensemble(&self) -> bool {
        matches!(self, Method::EnsAvg | Method::EnsMed)
    }

    /// Whether the method z-scores its features.
    pub fn standardizes(&self) -> bool {
        matches!(self, Method::Lasso | Method::Ridge | Method::Svr)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for Method {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let up = s.trim().to_ascii_uppercase().replace('-', "_");
        let m = match up.as_str() {
            "OLS" => Method::Ols,
            "LASSO" => Method::Lasso,
            "RIDGE" => Method::Ridge,
            "SVR" | "SVM" => Method::Svr,
            "XGB" | "XGBOOST" => Method::Xgb,
            "HGBT" | "LGBM" => Method::Hgbt,
            "RF" => Method::Rf,
            "ADABOOST" => Method::AdaBoost,
            "ENS_AVG" | "ENSEMBLE_AVG" => Method::EnsAvg,
            "ENS_MED" | "ENSEMBLE_MED" => Method::EnsMed,
            _ => return Err(ModelError::InvalidHyperparameter(format!("unknown method {s:?}"))),
        };
        Ok(m)
    }
}

/// Method together with its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method")]
pub enum Hyperparams {
    #[serde(rename = "OLS")]
    Ols,
    #[serde(rename = "LASSO")]
    Lasso(LassoParams),
    #[serde(rename = "RIDGE")]
    Ridge(RidgeParams),
    #[serde(rename = "SVR")]
    Svr(SvrParams),
    #[serde(rename = "XGB")]
    Xgb(XgbParams),
    #[serde(rename = "HGBT")]
    Hgbt(HgbtParams),
    #[serde(rename = "RF")]
    Rf(RfParams),
    #[serde(rename = "ADABOOST")]
    AdaBoost(AdaBoostParams),
    #[serde(rename = "ENS_AVG")]
    EnsAvg,
    #[serde(rename = "ENS_MED")]
    EnsMed,
}

impl Hyperparams {
    pub fn default_for(method: Method) -> Self {
        match method {
            Method::Ols => Hyperparams::Ols,
            Method::Lasso => Hyperparams::Lasso(LassoParams::default()),
            Method::Ridge => Hyperparams::Ridge(RidgeParams::default()),
            Method::Svr => Hyperparams::Svr(SvrParams::default()),
            Method::Xgb => Hyperparams::Xgb(XgbParams::default()),
            Method::Hgbt => Hyperparams::Hgbt(HgbtParams::default()),
            Method::Rf => Hyperparams::Rf(RfParams::default()),
            Method::AdaBoost => Hyperparams::AdaBoost(AdaBoostParams::default()),
            Method::EnsAvg => Hyperparams::EnsAvg,
            Method::EnsMed => Hyperparams::EnsMed,
        }
    }

    pub fn method(&self) -> Method {
        match self {
            Hyperparams::Ols => Method::Ols,
            Hyperparams::Lasso(_) => Method::Lasso,
            Hyperparams::Ridge(_) => Method::Ridge,
            Hyperparams::Svr(_) => Method::Svr,
            Hyperparams::Xgb(_) => Method::Xgb,
            Hyperparams::Hgbt(_) => Method::Hgbt,
            Hyperparams::Rf(_) => Method::Rf,
            Hyperparams::AdaBoost(_) => Method::AdaBoost,
            Hyperparams::EnsAvg => Method::EnsAvg,
            Hyperparams::EnsMed => Method::EnsMed,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            Hyperparams::Lasso(p) => p.validate(),
            Hyperparams::Ridge(p) => p.validate(),
            Hyperparams::Svr(p) => p.validate(),
            Hyperparams::Xgb(p) => p.validate(),
            Hyperparams::Hgbt(p) => p.validate(),
            Hyperparams::Rf(p) => p.validate(),
            Hyperparams::AdaBoost(p) => p.validate(),
            Hyperparams::Ols | Hyperparams::EnsAvg | Hyperparams::EnsMed => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(flatten)]
    pub params: Hyperparams,
    #[serde(default)]
    pub seed: u64,
}

impl ModelSpec {
    pub fn new(params: Hyperparams, seed: u64) -> Self {
        Self { params, seed }
    }

    pub fn default_for(method: Method) -> Self {
        Self { params: Hyperparams::default_for(method), seed: 0 }
    }

    /// All ten methods with default hyperparameters.
    pub fn all_defaults() -> Vec<ModelSpec> {
        Method::ALL.iter().map(|&m| ModelSpec::default_for(m)).collect()
    }

    pub fn method(&self) -> Method {
        self.params.method()
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// One target stock's training window: rows are dates, columns are the
/// selected predictors.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSet {
    pub x: Array2<f64>,
    pub y: Vec<f64>,
    pub feature_ids: Vec<String>,
}

impl TrainSet {
    pub fn new(x: Array2<f64>, y: Vec<f64>, feature_ids: Vec<String>) -> Result<Self, ModelError> {
        let t = Self { x, y, feature_ids };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let (d, n) = self.x.dim();
        if d != self.y.len() {
            return Err(ModelError::InvalidTrainSet(format!("X has {d} rows but y has {} entries", self.y.len())));
        }
        if n != self.feature_ids.len() {
            return Err(ModelError::InvalidTrainSet(format!("X has {n} columns but {} feature ids", self.feature_ids.len())));
        }
        if d < 3 {
            return Err(ModelError::InvalidTrainSet(format!("{d} rows, need at least 3")));
        }
        if n == 0 {
            return Err(ModelError::InvalidTrainSet("no features".into()));
        }
        if self.x.iter().chain(&self.y).any(|v| !v.is_finite()) {
            return Err(ModelError::InvalidTrainSet("missing or non-finite entry".into()));
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }
}

/// Column means and population standard deviations; a zero deviation is
/// stored as 1 so the column maps to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    pub fn fit(x: ArrayView2<f64>) -> Self {
        let mut mean = Vec::with_capacity(x.ncols());
        let mut std = Vec::with_capacity(x.ncols());
        for col in x.axis_iter(Axis(1)) {
            let c: Vec<f64> = col.to_vec();
            mean.push(stats::mean(&c));
            let s = stats::population_std(&c);
            std.push(if s > 0.0 && s.is_finite() { s } else { 1.0 });
        }
        Self { mean, std }
    }

    pub fn identity(n: usize) -> Self {
        Self { mean: vec![0.0; n], std: vec![1.0; n] }
    }

    pub fn apply_matrix(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            col.mapv_inplace(|v| (v - self.mean[j]) / self.std[j]);
        }
        out
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().enumerate().map(|(j, &v)| (v - self.mean[j]) / self.std[j]).collect()
    }
}

/// Fitted parameters of a linear model, in the model's feature space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearState {
    pub intercept: f64,
    pub coef: Vec<f64>,
}

impl LinearState {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + self.coef.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedState {
    pub base: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
}

impl BoostedState {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.base + self.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedTrees {
    pub trees: Vec<Tree>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelState {
    Linear(LinearState),
    Svr(SvrState),
    Boosted(BoostedState),
    Forest(Vec<Tree>),
    AdaBoost(WeightedTrees),
    Ensemble(Vec<FittedModel>),
}

/// Solver bookkeeping. `loss_trace` holds the training RSS after every
/// boosting round for the boosted methods.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    pub loss_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub spec: ModelSpec,
    pub feature_ids: Vec<String>,
    pub standardization: Standardization,
    pub state: ModelState,
    pub diagnostics: FitDiagnostics,
}

impl FittedModel {
    pub fn method(&self) -> Method {
        self.spec.method()
    }

    pub fn n_features(&self) -> usize {
        self.feature_ids.len()
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64, ModelError> {
        if x.len() != self.n_features() {
            return Err(ModelError::DimensionMismatch { expected: self.n_features(), got: x.len() });
        }
        Ok(self.predict_unchecked(x))
    }

    fn predict_unchecked(&self, x: &[f64]) -> f64 {
        let z;
        let x = if self.method().standardizes() {
            z = self.standardization.apply(x);
            &z[..]
        } else {
            x
        };
        match &self.state {
            ModelState::Linear(s) => s.predict(x),
            ModelState::Svr(s) => s.predict(x),
            ModelState::Boosted(s) => s.predict(x),
            ModelState::Forest(trees) => trees.iter().map(|t| t.predict(x)).sum::<f64>() / trees.len() as f64,
            ModelState::AdaBoost(s) => {
                let preds: Vec<f64> = s.trees.iter().map(|t| t.predict(x)).collect();
                stats::weighted_median(&preds, &s.weights)
            }
            ModelState::Ensemble(models) => {
                let preds: Vec<f64> = models.iter().map(|m| m.predict_unchecked(x)).collect();
                let mode = if self.method() == Method::EnsMed { EnsembleMode::Median } else { EnsembleMode::Average };
                ensemble_predict(&preds, mode).expect("ensemble holds the eight base models")
            }
        }
    }

    /// Predictions of each individual tree, for forests.
    pub fn tree_predictions(&self, x: &[f64]) -> Option<Vec<f64>> {
        match &self.state {
            ModelState::Forest(trees) => Some(trees.iter().map(|t| t.predict(x)).collect()),
            _ => None,
        }
    }

    /// `Err(NonConvergence)` when an iterative solver hit its iteration cap.
    pub fn convergence(&self) -> Result<(), ModelError> {
        if self.diagnostics.converged {
            Ok(())
        } else {
            Err(ModelError::NonConvergence { iterations: self.diagnostics.iterations })
        }
    }

    /// Human-readable audit dump of the full fitted state.
    pub fn dump(&self) -> String {
        serde_json::to_string_pretty(self).expect("fitted models serialize")
    }
}

pub fn fit(spec: &ModelSpec, train: &TrainSet) -> Result<FittedModel, ModelError> {
    train.validate()?;
    spec.params.validate()?;
    let method = spec.method();
    let n = train.n_features();
    let standardization = if method.standardizes() { Standardization::fit(train.x.view()) } else { Standardization::identity(n) };
    let z;
    let x = if method.standardizes() {
        z = standardization.apply_matrix(train.x.view());
        z.view()
    } else {
        train.x.view()
    };
    let y = &train.y[..];
    let (state, diagnostics) = match &spec.params {
        Hyperparams::Ols => linear::fit_ols(x, y),
        Hyperparams::Ridge(p) => linear::fit_ridge(x, y, p)?,
        Hyperparams::Lasso(p) => lasso::fit(x, y, p),
        Hyperparams::Svr(p) => svr::fit(x, y, p),
        Hyperparams::Xgb(p) => xgb::fit(x, y, p),
        Hyperparams::Hgbt(p) => hgbt::fit(x, y, p),
        Hyperparams::Rf(p) => forest::fit(x, y, p, spec.seed),
        Hyperparams::AdaBoost(p) => adaboost::fit(x, y, p, spec.seed),
        Hyperparams::EnsAvg | Hyperparams::EnsMed => {
            let streams = SeedStream::new(spec.seed);
            let mut members = Vec::with_capacity(Method::BASE.len());
            for m in Method::BASE {
                let base = ModelSpec::default_for(m).with_seed(streams.derive(&[m.label()]));
                members.push(fit(&base, train)?);
            }
            (ModelState::Ensemble(members), FitDiagnostics { iterations: 0, converged: true, loss_trace: Vec::new() })
        }
    };
    if !diagnostics.converged {
        log::warn!("{method} stopped after {} iterations without converging", diagnostics.iterations);
    }
    Ok(FittedModel { spec: spec.clone(), feature_ids: train.feature_ids.clone(), standardization, state, diagnostics })
}

/// Builds an ensemble model from already fitted base models, given in
/// [`Method::BASE`] order.
pub fn ensemble_from(spec: &ModelSpec, members: Vec<FittedModel>) -> Result<FittedModel, ModelError> {
    if !spec.method().is_ensemble() {
        return Err(ModelError::InvalidHyperparameter(format!("{} is not an ensemble method", spec.method())));
    }
    if members.len() != Method::BASE.len() {
        return Err(ModelError::WrongArity { expected: Method::BASE.len(), got: members.len() });
    }
    let feature_ids = members[0].feature_ids.clone();
    let n = feature_ids.len();
    Ok(FittedModel {
        spec: spec.clone(),
        feature_ids,
        standardization: Standardization::identity(n),
        state: ModelState::Ensemble(members),
        diagnostics: FitDiagnostics { iterations: 0, converged: true, loss_trace: Vec::new() },
    })
}

pub fn predict(model: &FittedModel, x: &[f64]) -> Result<f64, ModelError> {
    model.predict(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnsembleMode {
    Average,
    Median,
}

/// Mean or median of the eight base-model predictions.
pub fn ensemble_predict(predictions: &[f64], mode: EnsembleMode) -> Result<f64, ModelError> {
    if predictions.len() != Method::BASE.len() {
        return Err(ModelError::WrongArity { expected: Method::BASE.len(), got: predictions.len() });
    }
    Ok(match mode {
        EnsembleMode::Average => stats::mean(predictions),
        EnsembleMode::Median => stats::median(predictions),
    })
}

pub(crate) fn rss(pred: &[f64], y: &[f64]) -> f64 {
    pred.iter().zip(y).map(|(p, v)| (v - p) * (v - p)).sum()
}

pub(crate) fn column_var(x: ArrayView2<f64>) -> f64 {
    let all: Vec<f64> = x.iter().copied().collect();
    let s = stats::population_std(&all);
    s * s
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn toy() -> TrainSet {
        let x = Array2::from_shape_fn((40, 2), |(i, j)| ((i * 7 + j * 13) % 11) as f64 / 10.0 - 0.5 + j as f64 * 0.01 * i as f64);
        let y: Vec<f64> = (0..40).map(|i| 0.3 * x[[i, 0]] - 0.2 * x[[i, 1]] + 0.01 * ((i % 3) as f64 - 1.0)).collect();
        TrainSet::new(x, y, vec!["a".into(), "b".into()]).unwrap()
    }

    #[test]
    fn ensemble_examples() {
        assert_eq!(ensemble_predict(&[0.01; 8], EnsembleMode::Average).unwrap(), 0.01);
        assert_eq!(ensemble_predict(&[0.01; 8], EnsembleMode::Median).unwrap(), 0.01);
        let v = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 100.0];
        assert_eq!(ensemble_predict(&v, EnsembleMode::Average).unwrap(), 16.0);
        assert_eq!(ensemble_predict(&v, EnsembleMode::Median).unwrap(), 4.5);
        assert_eq!(ensemble_predict(&v[..7], EnsembleMode::Median), Err(ModelError::WrongArity { expected: 8, got: 7 }));
    }

    #[test]
    fn spec_serde_roundtrip() {
        for spec in ModelSpec::all_defaults() {
            let s = serde_json::to_string(&spec).unwrap();
            let back: ModelSpec = serde_json::from_str(&s).unwrap();
            assert_eq!(back, spec);
        }
        let s: ModelSpec = serde_json::from_str(r#"{"method":"LASSO","lambda":0.5}"#).unwrap();
        assert_eq!(s.params, Hyperparams::Lasso(LassoParams { lambda: 0.5, ..Default::default() }));
        assert_eq!("xgboost".parse::<Method>().unwrap(), Method::Xgb);
    }

    #[test]
    fn every_method_fits_and_predicts_finite() {
        let t = toy();
        for spec in ModelSpec::all_defaults() {
            let m = fit(&spec, &t).unwrap();
            let p = m.predict(&[0.1, -0.2]).unwrap();
            assert!(p.is_finite(), "{}", spec.method());
            assert_eq!(m.predict(&[0.1]), Err(ModelError::DimensionMismatch { expected: 2, got: 1 }));
            assert!(m.dump().contains(spec.method().label()));
        }
    }

    #[test]
    fn ensemble_matches_members() {
        let t = toy();
        let ens = fit(&ModelSpec::default_for(Method::EnsMed), &t).unwrap();
        let ModelState::Ensemble(members) = &ens.state else { panic!() };
        let x = [0.3, 0.1];
        let preds: Vec<f64> = members.iter().map(|m| m.predict(&x).unwrap()).collect();
        assert_eq!(ens.predict(&x).unwrap(), stats::median(&preds));
    }

    #[test]
    fn train_set_validation() {
        assert!(TrainSet::new(array![[1.0], [2.0]], vec![1.0, 2.0], vec!["a".into()]).is_err());
        assert!(TrainSet::new(array![[1.0], [2.0], [f64::NAN]], vec![1.0, 2.0, 3.0], vec!["a".into()]).is_err());
        assert!(TrainSet::new(array![[1.0], [2.0], [3.0]], vec![1.0, 2.0], vec!["a".into()]).is_err());
    }
}
