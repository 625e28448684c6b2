use serde::{Deserialize, Serialize};

use crate::error::{Result, SpadeError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for a fixed list of parameter buffers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub cfg: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig, sizes: &[usize]) -> Self {
        Adam {
            cfg,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(SpadeError::DimensionMismatch {
                expected: self.m.len(),
                actual: params.len().min(grads.len()),
            });
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.len() != m.len() || g.len() != m.len() {
                return Err(SpadeError::DimensionMismatch {
                    expected: m.len(),
                    actual: if p.len() != m.len() { p.len() } else { g.len() },
                });
            }
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_noop() {
        let mut adam = Adam::new(AdamConfig::default(), &[3]);
        let mut p = vec![1.0, -2.0, 3.0];
        for _ in 0..5 {
            adam.step(&mut [&mut p], &[&[0.0; 3]]).unwrap();
        }
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn constant_gradient_direction() {
        let mut adam = Adam::new(AdamConfig::default(), &[2]);
        let mut p = vec![0.0, 0.0];
        for _ in 0..50 {
            adam.step(&mut [&mut p], &[&[2.0, -0.5]]).unwrap();
        }
        assert!(p[0] < 0.0 && p[1] > 0.0);
    }

    #[test]
    fn two_steps_by_hand() {
        // lr 0.1, betas (0.5, 0.75), eps 0; grads 2 then 1.
        // t=1: m=1, v=1, m_hat=2, v_hat=4 -> step 0.1 * 2/2 = 0.1
        // t=2: m=1, v=1, m_hat=1/0.75, v_hat=1/0.4375 -> 0.1 * (4/3) / sqrt(16/7)
        let cfg = AdamConfig {
            lr: 0.1,
            beta1: 0.5,
            beta2: 0.75,
            eps: 0.0,
        };
        let mut adam = Adam::new(cfg, &[1]);
        let mut p = vec![1.0];
        adam.step(&mut [&mut p], &[&[2.0]]).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-15);
        adam.step(&mut [&mut p], &[&[1.0]]).unwrap();
        let second = 0.1 * (4.0 / 3.0) / (16.0f64 / 7.0).sqrt();
        assert!((p[0] - (0.9 - second)).abs() < 1e-15);
        assert_eq!(adam.steps(), 2);
    }

    #[test]
    fn shape_mismatch() {
        let mut adam = Adam::new(AdamConfig::default(), &[2]);
        let mut p = vec![0.0; 3];
        assert!(adam.step(&mut [&mut p], &[&[0.0; 3]]).is_err());
    }
}
