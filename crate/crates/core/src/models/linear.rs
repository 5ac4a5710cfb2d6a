use nalgebra::{DMatrix, DVector};
use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::{FitDiagnostics, LinearState, ModelError, ModelState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RidgeParams {
    /// Penalty on `‖w‖²` in `‖y − ȳ − Xw‖² + λ‖w‖²`.
    pub lambda: f64,
}

impl Default for RidgeParams {
    fn default() -> Self {
        Self { lambda: 0.1 }
    }
}

impl RidgeParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(ModelError::InvalidHyperparameter(format!("ridge lambda = {}", self.lambda)));
        }
        Ok(())
    }
}

/// Column means, centered design and centered response.
pub(crate) fn center(x: ArrayView2<f64>, y: &[f64]) -> (Vec<f64>, DMatrix<f64>, f64, DVector<f64>) {
    let (d, n) = x.dim();
    let means: Vec<f64> = (0..n).map(|j| x.column(j).sum() / d as f64).collect();
    let xc = DMatrix::from_fn(d, n, |i, j| x[[i, j]] - means[j]);
    let y_bar = y.iter().sum::<f64>() / d as f64;
    let yc = DVector::from_iterator(d, y.iter().map(|v| v - y_bar));
    (means, xc, y_bar, yc)
}

fn state(means: &[f64], y_bar: f64, w: &DVector<f64>) -> LinearState {
    let coef: Vec<f64> = w.iter().copied().collect();
    let intercept = y_bar - coef.iter().zip(means).map(|(c, m)| c * m).sum::<f64>();
    LinearState { intercept, coef }
}

/// Minimum-norm least squares on the centered design: `w = X⁺ y`.
pub(crate) fn min_norm(xc: &DMatrix<f64>, yc: &DVector<f64>) -> DVector<f64> {
    let svd = xc.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * f64::EPSILON * xc.nrows().max(xc.ncols()) as f64;
    svd.solve(yc, tol).unwrap_or_else(|_| DVector::zeros(xc.ncols()))
}

pub(super) fn fit_ols(x: ArrayView2<f64>, y: &[f64]) -> (ModelState, FitDiagnostics) {
    let (means, xc, y_bar, yc) = center(x, y);
    let w = min_norm(&xc, &yc);
    (ModelState::Linear(state(&means, y_bar, &w)), FitDiagnostics { iterations: 0, converged: true, loss_trace: Vec::new() })
}

/// Solves `(XᵀX + λI) w = Xᵀy` on the centered data by Cholesky, falling back
/// to the minimum-norm solution when the system is singular.
pub(crate) fn ridge_solve(xc: &DMatrix<f64>, yc: &DVector<f64>, lambda: f64) -> DVector<f64> {
    let n = xc.ncols();
    let a = xc.transpose() * xc + DMatrix::identity(n, n) * lambda;
    let b = xc.transpose() * yc;
    match a.cholesky() {
        Some(ch) => ch.solve(&b),
        None => min_norm(xc, yc),
    }
}

pub(super) fn fit_ridge(x: ArrayView2<f64>, y: &[f64], p: &RidgeParams) -> Result<(ModelState, FitDiagnostics), ModelError> {
    let (means, xc, y_bar, yc) = center(x, y);
    let w = ridge_solve(&xc, &yc, p.lambda);
    if w.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::SingularSystem);
    }
    Ok((ModelState::Linear(state(&means, y_bar, &w)), FitDiagnostics { iterations: 0, converged: true, loss_trace: Vec::new() }))
}

#[cfg(test)]
mod tests {
    use super::super::*;
    use ndarray::Array2;

    fn lin_state(m: &FittedModel) -> &LinearState {
        match &m.state {
            ModelState::Linear(s) => s,
            _ => panic!("not linear"),
        }
    }

    #[test]
    fn ols_exact_line() {
        let x = Array2::from_shape_vec((5, 1), vec![0.0, 1.0, 2.0, 4.0, 5.0]).unwrap();
        let y: Vec<f64> = x.column(0).iter().map(|v| 2.0 * v + 1.0).collect();
        let t = TrainSet::new(x, y.clone(), vec!["x".into()]).unwrap();
        let m = fit(&ModelSpec::default_for(Method::Ols), &t).unwrap();
        assert!((m.predict(&[3.0]).unwrap() - 7.0).abs() < 1e-9);
        let mean_x = t.x.column(0).mean().unwrap();
        assert!((m.predict(&[mean_x]).unwrap() - crate::stats::mean(&y)).abs() < 1e-9);
    }

    #[test]
    fn ols_minimum_norm_when_wide() {
        // duplicated column: the minimum-norm solution splits weight evenly
        let x = Array2::from_shape_fn((4, 2), |(i, _)| i as f64);
        let y = vec![0.0, 1.0, 2.0, 3.0];
        let t = TrainSet::new(x, y, vec!["a".into(), "b".into()]).unwrap();
        let m = fit(&ModelSpec::default_for(Method::Ols), &t).unwrap();
        let s = lin_state(&m);
        assert!((s.coef[0] - 0.5).abs() < 1e-10 && (s.coef[1] - 0.5).abs() < 1e-10);
    }

    #[test]
    fn ridge_zero_lambda_is_ols_on_standardized() {
        let x = Array2::from_shape_fn((30, 3), |(i, j)| ((i * (j + 3)) % 7) as f64 + 0.1 * j as f64 * i as f64);
        let y: Vec<f64> = (0..30).map(|i| x[[i, 0]] - 0.5 * x[[i, 2]] + ((i % 4) as f64) * 0.1).collect();
        let t = TrainSet::new(x, y, vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let r = fit(&ModelSpec::new(Hyperparams::Ridge(RidgeParams { lambda: 0.0 }), 0), &t).unwrap();
        let o = fit(&ModelSpec::default_for(Method::Ols), &t).unwrap();
        for probe in [[1.0, 2.0, 3.0], [0.0, -1.0, 5.0]] {
            assert!((r.predict(&probe).unwrap() - o.predict(&probe).unwrap()).abs() < 1e-8);
        }
    }
}
