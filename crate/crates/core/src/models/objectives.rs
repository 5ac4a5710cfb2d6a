//! Objectives minimized by the linear solvers and their gradients, on a
//! design `x` and response `y` that the caller has already centered.
//!
//! | model | objective |
//! |-------|-----------|
//! | OLS   | `‖y − Xw‖²` |
//! | RIDGE | `‖y − Xw‖² + λ‖w‖²` |
//! | LASSO | `(1/2d)‖y − Xw‖² + λ‖w‖₁` |
//!
//! The LASSO gradient is only defined where no coefficient is zero.

use ndarray::ArrayView2;

fn residual(x: ArrayView2<f64>, y: &[f64], w: &[f64]) -> Vec<f64> {
    x.rows().into_iter().zip(y).map(|(row, yi)| yi - row.iter().zip(w).map(|(a, b)| a * b).sum::<f64>()).collect()
}

fn xt_r(x: ArrayView2<f64>, r: &[f64]) -> Vec<f64> {
    (0..x.ncols()).map(|j| x.column(j).iter().zip(r).map(|(a, b)| a * b).sum()).collect()
}

pub fn ols_objective(x: ArrayView2<f64>, y: &[f64], w: &[f64]) -> f64 {
    residual(x, y, w).iter().map(|r| r * r).sum()
}

pub fn ols_gradient(x: ArrayView2<f64>, y: &[f64], w: &[f64]) -> Vec<f64> {
    xt_r(x, &residual(x, y, w)).into_iter().map(|g| -2.0 * g).collect()
}

pub fn ridge_objective(x: ArrayView2<f64>, y: &[f64], w: &[f64], lambda: f64) -> f64 {
    ols_objective(x, y, w) + lambda * w.iter().map(|v| v * v).sum::<f64>()
}

pub fn ridge_gradient(x: ArrayView2<f64>, y: &[f64], w: &[f64], lambda: f64) -> Vec<f64> {
    ols_gradient(x, y, w).into_iter().zip(w).map(|(g, v)| g + 2.0 * lambda * v).collect()
}

pub fn lasso_objective(x: ArrayView2<f64>, y: &[f64], w: &[f64], lambda: f64) -> f64 {
    let d = x.nrows() as f64;
    ols_objective(x, y, w) / (2.0 * d) + lambda * w.iter().map(|v| v.abs()).sum::<f64>()
}

pub fn lasso_gradient(x: ArrayView2<f64>, y: &[f64], w: &[f64], lambda: f64) -> Vec<f64> {
    let d = x.nrows() as f64;
    xt_r(x, &residual(x, y, w)).into_iter().zip(w).map(|(g, v)| -g / d + lambda * v.signum()).collect()
}
