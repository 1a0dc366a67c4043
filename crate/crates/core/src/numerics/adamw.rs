use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

/// AdamW hyperparameters. Defaults: lr 0.001, weight decay 0.01.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Optimizer state: one first/second moment pair per tracked parameter matrix.
#[derive(Clone, Debug)]
pub struct AdamWState {
    pub config: AdamWConfig,
    step: u64,
    first_moment: Vec<Matrix>,
    second_moment: Vec<Matrix>,
}

impl AdamWState {
    /// Zeroed moments shaped like `params`.
    pub fn new(config: AdamWConfig, params: &[&Matrix]) -> Self {
        let zeros: Vec<Matrix> = params
            .iter()
            .map(|p| Matrix::zeros(p.rows(), p.cols()))
            .collect();
        Self {
            config,
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One decoupled-weight-decay Adam update, in place:
    ///
    /// ```text
    /// p ← p − lr·wd·p
    /// m ← β₁m + (1−β₁)g,  v ← β₂v + (1−β₂)g²
    /// p ← p − lr · m̂ / (√v̂ + ε)
    /// ```
    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Matrix]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first_moment.len() {
            return Err(Error::arg(
                "params",
                format!(
                    "{} params, {} grads, {} tracked moments",
                    params.len(),
                    grads.len(),
                    self.first_moment.len()
                ),
            ));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first_moment) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::Shape {
                    op: "adamw_step",
                    left: p.shape(),
                    right: g.shape(),
                });
            }
        }

        self.step += 1;
        let AdamWConfig {
            lr,
            weight_decay,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);
        let decay = 1.0 - lr * weight_decay;

        for (i, p) in params.iter_mut().enumerate() {
            let g = grads[i].as_slice();
            let m = self.first_moment[i].as_mut_slice();
            let v = self.second_moment[i].as_mut_slice();
            for (j, w) in p.as_mut_slice().iter_mut().enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let m_hat = m[j] / bias1;
                let v_hat = v[j] / bias2;
                *w = *w * decay - lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}
