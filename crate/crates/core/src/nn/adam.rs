use serde::{Deserialize, Serialize};

use crate::error::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moments, aligned with a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
}

impl AdamState {
    pub fn new(config: AdamConfig, param_count: usize) -> Self {
        Self {
            config,
            step: 0,
            first_moment: vec![0.0; param_count],
            second_moment: vec![0.0; param_count],
        }
    }

    /// Applies one update. Non-finite gradients leave everything untouched and
    /// report divergence.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<(), NnError> {
        let n = self.first_moment.len();
        if params.len() != n || grads.len() != n {
            return Err(NnError::Dimension {
                expected: n,
                got: if params.len() != n { params.len() } else { grads.len() },
            });
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(NnError::Diverged(i));
        }
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for i in 0..n {
            let g = grads[i];
            let m = beta1 * self.first_moment[i] + (1.0 - beta1) * g;
            let v = beta2 * self.second_moment[i] + (1.0 - beta2) * g * g;
            self.first_moment[i] = m;
            self.second_moment[i] = v;
            params[i] -= lr * (m / c1) / ((v / c2).sqrt() + eps);
        }
        Ok(())
    }
}
