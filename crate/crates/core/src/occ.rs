//! Gaussian distribution estimator used as a one-class classifier. The score
//! is the negative log-density, so larger means more anomalous.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SpadeError};
use crate::linalg::{cholesky, forward_substitute, Matrix};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Largest relative regularizer tried before giving up.
const MAX_REL_EPS: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceKind {
    #[default]
    Full,
    Diagonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GdeConfig {
    /// Ridge added to the covariance diagonal, relative to the mean diagonal
    /// magnitude of the sample covariance.
    pub rel_eps: f64,
    pub covariance: CovarianceKind,
}

impl Default for GdeConfig {
    fn default() -> Self {
        GdeConfig {
            rel_eps: 1e-6,
            covariance: CovarianceKind::Full,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianOcc {
    mean: Vec<f64>,
    covariance: Matrix,
    /// Lower factor of `covariance + eps * I`.
    factor: Matrix,
    log_det: f64,
    eps: f64,
    n_fit: usize,
}

/// On-disk form; the factor is recomputed on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianOccJson {
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub eps: f64,
    #[serde(default)]
    pub n_fit: usize,
}

impl GaussianOcc {
    /// Fits mean and (denominator-`n`) covariance to the rows of `x`.
    pub fn fit(x: &Matrix, cfg: &GdeConfig) -> Result<Self> {
        let (n, d) = (x.rows(), x.cols());
        if n < 2 {
            return Err(SpadeError::invalid(format!("GDE needs at least 2 samples, got {n}")));
        }
        if d == 0 {
            return Err(SpadeError::invalid("GDE needs at least one feature"));
        }
        if !x.is_finite() {
            return Err(SpadeError::NonFinite("GDE training data".into()));
        }
        if !(cfg.rel_eps > 0.0) {
            return Err(SpadeError::invalid("rel_eps must be positive"));
        }
        let mean = x.column_means();
        let mut cov = Matrix::zeros(d, d);
        let mut centered = vec![0.0; d];
        for r in x.row_iter() {
            for ((c, &v), &m) in centered.iter_mut().zip(r).zip(&mean) {
                *c = v - m;
            }
            for i in 0..d {
                let ci = centered[i];
                if ci == 0.0 {
                    continue;
                }
                let row = cov.row_mut(i);
                for j in 0..=i {
                    row[j] += ci * centered[j];
                }
            }
        }
        for i in 0..d {
            for j in 0..=i {
                let v = cov[(i, j)] / n as f64;
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }
        if cfg.covariance == CovarianceKind::Diagonal {
            for i in 0..d {
                for j in 0..d {
                    if i != j {
                        cov[(i, j)] = 0.0;
                    }
                }
            }
        }
        let scale = {
            let s = (0..d).map(|i| cov[(i, i)]).sum::<f64>() / d as f64;
            if s > 0.0 {
                s
            } else {
                1.0
            }
        };
        let mut rel = cfg.rel_eps;
        loop {
            let eps = rel * scale;
            if let Some(occ) = Self::from_parts(mean.clone(), cov.clone(), eps, n) {
                return Ok(occ);
            }
            if rel >= MAX_REL_EPS {
                return Err(SpadeError::Factorization { eps });
            }
            rel = (rel * 10.0).min(MAX_REL_EPS);
        }
    }

    fn from_parts(mean: Vec<f64>, covariance: Matrix, eps: f64, n_fit: usize) -> Option<Self> {
        let mut reg = covariance.clone();
        for i in 0..reg.rows() {
            reg[(i, i)] += eps;
        }
        let factor = cholesky(&reg)?;
        let log_det = 2.0 * (0..factor.rows()).map(|i| factor[(i, i)].ln()).sum::<f64>();
        Some(GaussianOcc {
            mean,
            covariance,
            factor,
            log_det,
            eps,
            n_fit,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn covariance(&self) -> &Matrix {
        &self.covariance
    }

    pub fn factor(&self) -> &Matrix {
        &self.factor
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn n_fit(&self) -> usize {
        self.n_fit
    }

    /// Squared Mahalanobis distance to the mean under the regularized
    /// covariance. Caller guarantees the length.
    pub fn mahalanobis_sq(&self, x: &[f64]) -> f64 {
        let mut z: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        forward_substitute(&self.factor, &mut z);
        z.iter().map(|v| v * v).sum()
    }

    fn score_unchecked(&self, x: &[f64]) -> f64 {
        0.5 * self.mahalanobis_sq(x) + 0.5 * self.log_det + 0.5 * self.dim() as f64 * LN_2PI
    }

    /// Negative log-density of `x`.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(SpadeError::DimensionMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        Ok(self.score_unchecked(x))
    }

    pub fn score_batch(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.cols() != self.dim() {
            return Err(SpadeError::DimensionMismatch {
                expected: self.dim(),
                actual: x.cols(),
            });
        }
        Ok(x.row_iter().map(|r| self.score_unchecked(r)).collect())
    }

    pub fn to_json(&self) -> GaussianOccJson {
        GaussianOccJson {
            mean: self.mean.clone(),
            covariance: self.covariance.row_iter().map(<[f64]>::to_vec).collect(),
            eps: self.eps,
            n_fit: self.n_fit,
        }
    }

    pub fn from_json(j: &GaussianOccJson) -> Result<Self> {
        let d = j.mean.len();
        let cov = Matrix::from_rows(&j.covariance)?;
        if cov.rows() != d || cov.cols() != d {
            return Err(SpadeError::DimensionMismatch {
                expected: d,
                actual: cov.rows(),
            });
        }
        Self::from_parts(j.mean.clone(), cov, j.eps, j.n_fit).ok_or(SpadeError::Factorization { eps: j.eps })
    }
}

impl Serialize for GaussianOcc {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

impl<'de> Deserialize<'de> for GaussianOcc {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = GaussianOccJson::deserialize(d)?;
        GaussianOcc::from_json(&j).map_err(serde::de::Error::custom)
    }
}

/// Fits a full-covariance GDE with the default regularizer.
pub fn fit_gde(x: &Matrix, rel_eps: f64) -> Result<GaussianOcc> {
    GaussianOcc::fit(
        x,
        &GdeConfig {
            rel_eps,
            ..GdeConfig::default()
        },
    )
}
