//! ε-support vector regression with an RBF kernel, solved by sequential
//! minimal optimization on the dual with second-order working-set selection.
//!
//! The dual over `β = (α, α*)` is written in the single-constraint form
//!
//! ```text
//! min ½ βᵀQβ + pᵀβ   s.t.  sᵀβ = 0,  0 ≤ β ≤ C
//! ```
//!
//! with `s = (+1…, −1…)`, `p = (ε − y, ε + y)` and `Q_ab = s_a s_b K(a, b)`.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::{column_var, FitDiagnostics, ModelError, ModelState};

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvrParams {
    pub c: f64,
    pub epsilon: f64,
    /// RBF width; `None` means `1 / (n_features · var(X))`.
    pub gamma: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SvrParams {
    fn default() -> Self {
        Self { c: 10.0, epsilon: 1e-4, gamma: None, tol: 1e-4, max_iter: 10_000 }
    }
}

impl SvrParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(ModelError::InvalidHyperparameter(format!("SVR C = {}", self.c)));
        }
        if !(self.epsilon >= 0.0) || !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(ModelError::InvalidHyperparameter("SVR epsilon, tol and max_iter".into()));
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(ModelError::InvalidHyperparameter(format!("SVR gamma = {g}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrState {
    pub gamma: f64,
    pub rho: f64,
    /// Training rows with nonzero `α − α*`.
    pub support: Vec<Vec<f64>>,
    pub dual_coef: Vec<f64>,
    /// Full `α` and `α*` vectors, kept for feasibility audits.
    pub alpha: Vec<f64>,
    pub alpha_star: Vec<f64>,
}

impl SvrState {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.support.iter().zip(&self.dual_coef).map(|(sv, c)| c * rbf(sv, x, self.gamma)).sum::<f64>() - self.rho
    }
}

fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum();
    (-gamma * d2).exp()
}

pub(super) fn fit(x: ArrayView2<f64>, y: &[f64], p: &SvrParams) -> (ModelState, FitDiagnostics) {
    let (l, n) = x.dim();
    let gamma = p.gamma.unwrap_or_else(|| {
        let v = column_var(x);
        if v > 0.0 {
            1.0 / (n as f64 * v)
        } else {
            1.0
        }
    });
    let rows: Vec<Vec<f64>> = (0..l).map(|i| x.row(i).to_vec()).collect();
    let mut k = vec![0.0; l * l];
    for i in 0..l {
        k[i * l + i] = 1.0;
        for j in 0..i {
            let v = rbf(&rows[i], &rows[j], gamma);
            k[i * l + j] = v;
            k[j * l + i] = v;
        }
    }
    let m = 2 * l;
    let sgn = |a: usize| if a < l { 1.0 } else { -1.0 };
    let q = |a: usize, b: usize| sgn(a) * sgn(b) * k[(a % l) * l + (b % l)];
    let c = p.c;
    let mut beta = vec![0.0; m];
    let mut grad: Vec<f64> = (0..m).map(|a| if a < l { p.epsilon - y[a] } else { p.epsilon + y[a - l] }).collect();
    let is_upper = |b: f64| b >= c;
    let is_lower = |b: f64| b <= 0.0;

    let mut iter = 0;
    let mut converged = false;
    while iter < p.max_iter {
        // second-order working-set selection
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = usize::MAX;
        for t in 0..m {
            if sgn(t) > 0.0 {
                if !is_upper(beta[t]) && -grad[t] >= gmax {
                    gmax = -grad[t];
                    i_sel = t;
                }
            } else if !is_lower(beta[t]) && grad[t] >= gmax {
                gmax = grad[t];
                i_sel = t;
            }
        }
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j_sel = usize::MAX;
        let mut obj_min = f64::INFINITY;
        if i_sel != usize::MAX {
            let r = i_sel % l;
            let k_sel = &k[r * l..(r + 1) * l];
            for t in 0..m {
                let (eligible, gd, g2) = if sgn(t) > 0.0 {
                    (!is_lower(beta[t]), gmax + grad[t], grad[t])
                } else {
                    (!is_upper(beta[t]), gmax - grad[t], -grad[t])
                };
                if !eligible {
                    continue;
                }
                gmax2 = gmax2.max(g2);
                if gd > 0.0 {
                    let kv = if t < l { k_sel[t] } else { k_sel[t - l] };
                    let quad = 2.0 - 2.0 * kv;
                    let quad = if quad > 0.0 { quad } else { TAU };
                    let obj = -(gd * gd) / quad;
                    if obj <= obj_min {
                        obj_min = obj;
                        j_sel = t;
                    }
                }
            }
        }
        if gmax + gmax2 < p.tol || j_sel == usize::MAX {
            converged = true;
            break;
        }
        iter += 1;
        let (i, j) = (i_sel, j_sel);
        let qij = q(i, j);
        let (old_i, old_j) = (beta[i], beta[j]);
        if sgn(i) != sgn(j) {
            let quad = (2.0 + 2.0 * qij).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = beta[i] - beta[j];
            beta[i] += delta;
            beta[j] += delta;
            if diff > 0.0 {
                if beta[j] < 0.0 {
                    beta[j] = 0.0;
                    beta[i] = diff;
                }
            } else if beta[i] < 0.0 {
                beta[i] = 0.0;
                beta[j] = -diff;
            }
            if diff > 0.0 {
                if beta[i] > c {
                    beta[i] = c;
                    beta[j] = c - diff;
                }
            } else if beta[j] > c {
                beta[j] = c;
                beta[i] = c + diff;
            }
        } else {
            let quad = (2.0 - 2.0 * qij).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = beta[i] + beta[j];
            beta[i] -= delta;
            beta[j] += delta;
            if sum > c {
                if beta[i] > c {
                    beta[i] = c;
                    beta[j] = sum - c;
                }
            } else if beta[j] < 0.0 {
                beta[j] = 0.0;
                beta[i] = sum;
            }
            if sum > c {
                if beta[j] > c {
                    beta[j] = c;
                    beta[i] = sum - c;
                }
            } else if beta[i] < 0.0 {
                beta[i] = 0.0;
                beta[j] = sum;
            }
        }
        let (di, dj) = (beta[i] - old_i, beta[j] - old_j);
        let (ci, cj) = (sgn(i) * di, sgn(j) * dj);
        let (ri, rj) = (i % l, j % l);
        let (ki, kj) = (&k[ri * l..(ri + 1) * l], &k[rj * l..(rj + 1) * l]);
        let (g_pos, g_neg) = grad.split_at_mut(l);
        for t in 0..l {
            let v = ki[t] * ci + kj[t] * cj;
            g_pos[t] += v;
            g_neg[t] -= v;
        }
    }

    // bias from free variables, else midpoint of the feasible interval
    let (mut ub, mut lb, mut sum_free, mut n_free) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
    for t in 0..m {
        let yg = sgn(t) * grad[t];
        if is_upper(beta[t]) {
            if sgn(t) < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if is_lower(beta[t]) {
            if sgn(t) > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    let rho = if n_free > 0 { sum_free / n_free as f64 } else { (ub + lb) / 2.0 };

    let alpha = beta[..l].to_vec();
    let alpha_star = beta[l..].to_vec();
    let mut support = Vec::new();
    let mut dual_coef = Vec::new();
    for i in 0..l {
        let coef = alpha[i] - alpha_star[i];
        if coef != 0.0 {
            support.push(rows[i].clone());
            dual_coef.push(coef);
        }
    }
    (
        ModelState::Svr(SvrState { gamma, rho, support, dual_coef, alpha, alpha_star }),
        FitDiagnostics { iterations: iter, converged, loss_trace: Vec::new() },
    )
}

#[cfg(test)]
mod tests {
    use super::super::*;

    fn train() -> TrainSet {
        let x = Array2::from_shape_fn((80, 2), |(i, j)| ((i * (5 + 2 * j) + 3 * j) % 17) as f64 / 8.0 - 1.0);
        let y = (0..80).map(|i| 0.02 * x[[i, 0]] - 0.01 * (x[[i, 1]] * 2.0).sin() + 0.002 * ((i % 3) as f64 - 1.0)).collect();
        TrainSet::new(x, y, vec!["a".into(), "b".into()]).unwrap()
    }

    #[test]
    fn dual_feasibility() {
        let t = train();
        for c in [0.1, 1.0, 10.0] {
            let spec = ModelSpec::new(Hyperparams::Svr(SvrParams { c, ..Default::default() }), 0);
            let m = fit(&spec, &t).unwrap();
            let ModelState::Svr(s) = &m.state else { panic!() };
            if c <= 1.0 {
                assert!(m.convergence().is_ok(), "C = {c}");
            }
            for (a, b) in s.alpha.iter().zip(&s.alpha_star) {
                assert!((0.0..=c).contains(a) && (0.0..=c).contains(b));
            }
            let net: f64 = s.alpha.iter().zip(&s.alpha_star).map(|(a, b)| a - b).sum();
            assert!(net.abs() < 1e-10, "{net}");
        }
    }

    #[test]
    fn fits_inside_tube_with_large_c() {
        let t = train();
        let spec = ModelSpec::new(Hyperparams::Svr(SvrParams { c: 1000.0, epsilon: 1e-3, gamma: Some(0.5), ..Default::default() }), 0);
        let m = fit(&spec, &t).unwrap();
        let worst = (0..t.n_rows()).map(|i| (m.predict(&t.x.row(i).to_vec()).unwrap() - t.y[i]).abs()).fold(0.0, f64::max);
        assert!(worst < 0.01, "{worst}");
    }
}
