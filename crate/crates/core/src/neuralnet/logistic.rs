use serde::{Deserialize, Serialize};

use super::sigmoid;
use crate::error::{Result, SpadeError};
use crate::linalg::{dot, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticConfig {
    pub max_iter: usize,
    pub lr: f64,
    /// L2 penalty on the weights (not the bias).
    pub l2: f64,
    /// Stop once the gradient norm falls below this.
    pub tol: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig {
            max_iter: 2000,
            lr: 0.5,
            l2: 1e-4,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
}

impl LogisticModel {
    pub fn logit(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }

    pub fn predict_proba(&self, x: &Matrix) -> Vec<f64> {
        x.row_iter().map(|r| sigmoid(self.logit(r))).collect()
    }
}

/// Full-batch gradient descent on the mean L2-regularized logistic loss.
pub fn fit_logistic(x: &Matrix, y: &[f64], cfg: &LogisticConfig) -> Result<LogisticModel> {
    let n = x.rows();
    if y.len() != n {
        return Err(SpadeError::DimensionMismatch {
            expected: n,
            actual: y.len(),
        });
    }
    if y.iter().any(|&t| t != 0.0 && t != 1.0) {
        return Err(SpadeError::invalid("logistic targets must be 0 or 1"));
    }
    let pos = y.iter().filter(|&&t| t == 1.0).count();
    if pos == 0 || pos == n {
        return Err(SpadeError::invalid("logistic regression needs both classes"));
    }
    if !x.is_finite() {
        return Err(SpadeError::NonFinite("logistic inputs".into()));
    }
    let d = x.cols();
    let mut m = LogisticModel {
        weights: vec![0.0; d],
        bias: 0.0,
        iterations: 0,
    };
    let mut gw = vec![0.0; d];
    for it in 0..cfg.max_iter {
        gw.iter_mut().for_each(|g| *g = 0.0);
        let mut gb = 0.0;
        let mut loss = 0.0;
        for (r, &t) in x.row_iter().zip(y) {
            let z = m.logit(r);
            loss += z.max(0.0) - z * t + (-z.abs()).exp().ln_1p();
            let e = sigmoid(z) - t;
            gb += e;
            for (g, v) in gw.iter_mut().zip(r) {
                *g += e * v;
            }
        }
        let nf = n as f64;
        loss = loss / nf + 0.5 * cfg.l2 * dot(&m.weights, &m.weights);
        if !loss.is_finite() {
            return Err(SpadeError::OracleDiverged { iterations: it, loss });
        }
        gb /= nf;
        for (g, w) in gw.iter_mut().zip(&m.weights) {
            *g = *g / nf + cfg.l2 * w;
        }
        let norm = (dot(&gw, &gw) + gb * gb).sqrt();
        m.iterations = it;
        if norm < cfg.tol {
            break;
        }
        for (w, g) in m.weights.iter_mut().zip(&gw) {
            *w -= cfg.lr * g;
        }
        m.bias -= cfg.lr * gb;
    }
    Ok(m)
}
