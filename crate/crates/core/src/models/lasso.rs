use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::{FitDiagnostics, LinearState, ModelError, ModelState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LassoParams {
    /// Penalty in `(1/2d)‖y − ȳ − Xw‖² + λ‖w‖₁`.
    pub lambda: f64,
    /// Stop when no coefficient moves by more than `tol` (in units of the
    /// column's root mean square) during a sweep.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for LassoParams {
    fn default() -> Self {
        Self { lambda: 0.1, tol: 1e-12, max_sweeps: 100_000 }
    }
}

impl LassoParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(ModelError::InvalidHyperparameter(format!("lasso lambda = {}", self.lambda)));
        }
        if !(self.tol > 0.0) || self.max_sweeps == 0 {
            return Err(ModelError::InvalidHyperparameter("lasso tol and max_sweeps must be positive".into()));
        }
        Ok(())
    }
}

fn soft_threshold(z: f64, g: f64) -> f64 {
    if z > g {
        z - g
    } else if z < -g {
        z + g
    } else {
        0.0
    }
}

/// Cyclic coordinate descent with the intercept profiled out by centering.
/// Returns the fitted state, sweep count and whether the tolerance was met.
pub fn solve(x: ArrayView2<f64>, y: &[f64], p: &LassoParams) -> (LinearState, usize, bool) {
    let (d, n) = x.dim();
    let df = d as f64;
    let means: Vec<f64> = (0..n).map(|j| x.column(j).sum() / df).collect();
    // column-major centered copy for contiguous access
    let cols: Vec<Vec<f64>> = (0..n).map(|j| x.column(j).iter().map(|v| v - means[j]).collect()).collect();
    let sq: Vec<f64> = cols.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>() / df).collect();
    let y_bar = y.iter().sum::<f64>() / df;
    let mut r: Vec<f64> = y.iter().map(|v| v - y_bar).collect();
    let mut w = vec![0.0; n];
    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < p.max_sweeps {
        sweeps += 1;
        let mut max_step = 0.0f64;
        for j in 0..n {
            if sq[j] == 0.0 {
                continue;
            }
            let c = &cols[j];
            let rho = c.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() / df + sq[j] * w[j];
            let new = soft_threshold(rho, p.lambda) / sq[j];
            let delta = new - w[j];
            if delta != 0.0 {
                for (ri, ci) in r.iter_mut().zip(c) {
                    *ri -= delta * ci;
                }
                w[j] = new;
                max_step = max_step.max(delta.abs() * sq[j].sqrt());
            }
        }
        if max_step <= p.tol {
            converged = true;
            break;
        }
    }
    let intercept = y_bar - w.iter().zip(&means).map(|(a, b)| a * b).sum::<f64>();
    (LinearState { intercept, coef: w }, sweeps, converged)
}

pub(super) fn fit(x: ArrayView2<f64>, y: &[f64], p: &LassoParams) -> (ModelState, FitDiagnostics) {
    let (state, sweeps, converged) = solve(x, y, p);
    (ModelState::Linear(state), FitDiagnostics { iterations: sweeps, converged, loss_trace: Vec::new() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn data() -> (Array2<f64>, Vec<f64>) {
        let x = Array2::from_shape_fn((60, 4), |(i, j)| (((i * 31 + j * 17) % 23) as f64 - 11.0) / 7.0 + if j == 3 { 0.3 * i as f64 / 60.0 } else { 0.0 });
        let y = (0..60).map(|i| 0.8 * x[[i, 0]] - 0.3 * x[[i, 1]] + 0.05 * x[[i, 3]] + 0.1 * ((i % 5) as f64 - 2.0)).collect();
        (x, y)
    }

    #[test]
    fn zero_above_lambda_max() {
        let (x, y) = data();
        let y_bar = y.iter().sum::<f64>() / 60.0;
        let lmax = (0..4)
            .map(|j| {
                let m = x.column(j).mean().unwrap();
                x.column(j).iter().zip(&y).map(|(a, b)| (a - m) * (b - y_bar)).sum::<f64>().abs() / 60.0
            })
            .fold(0.0, f64::max);
        let (s, _, conv) = solve(x.view(), &y, &LassoParams { lambda: lmax * 1.0001, ..Default::default() });
        assert!(conv);
        assert!(s.coef.iter().all(|&c| c == 0.0));
        let (s, _, _) = solve(x.view(), &y, &LassoParams { lambda: lmax * 0.9, ..Default::default() });
        assert!(s.coef.iter().any(|&c| c != 0.0));
    }

    #[test]
    fn kkt_conditions() {
        let (x, y) = data();
        for lambda in [0.001, 0.05, 0.2] {
            let (s, _, conv) = solve(x.view(), &y, &LassoParams { lambda, ..Default::default() });
            assert!(conv);
            let res: Vec<f64> = (0..60).map(|i| y[i] - s.predict(&x.row(i).to_vec())).collect();
            for j in 0..4 {
                let m = x.column(j).mean().unwrap();
                let g = x.column(j).iter().zip(&res).map(|(a, r)| (a - m) * r).sum::<f64>() / 60.0;
                if s.coef[j] == 0.0 {
                    assert!(g.abs() <= lambda + 1e-6);
                } else {
                    assert!((g - lambda * s.coef[j].signum()).abs() <= 1e-6);
                }
            }
        }
    }
}
