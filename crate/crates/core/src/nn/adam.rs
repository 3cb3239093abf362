//! Adam optimizer with bias correction.

use super::{Gradients, NetParams};
use serde::{Deserialize, Serialize};

/// Per-parameter first/second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(param_len: usize) -> Self {
        Self {
            m: vec![0.0; param_len],
            v: vec![0.0; param_len],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// One bias-corrected Adam update in place.
    pub fn step(&mut self, params: &mut NetParams, grads: &Gradients, lr: f64) {
        assert!(lr > 0.0, "learning rate must be positive");
        assert_eq!(params.values.len(), grads.values.len());
        assert_eq!(params.values.len(), self.m.len());

        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.values.len() {
            let g = grads.values[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / b1t;
            let v_hat = self.v[i] / b2t;
            params.values[i] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}
