//! NAdam: Adam with a Nesterov look-ahead on the first moment.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NAdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for NAdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Optimizer state. Moments are allocated on the first step.
#[derive(Clone, Debug)]
pub struct NAdam {
    pub cfg: NAdamConfig,
    t: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl NAdam {
    pub fn new(cfg: NAdamConfig) -> Self {
        Self {
            cfg,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn lr(&self) -> f64 {
        self.cfg.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    /// One update of every parameter from its gradient:
    ///
    /// ```text
    /// m ← β1·m + (1−β1)·g          v ← β2·v + (1−β2)·g²
    /// m̂ = m / (1−β1ᵗ)              v̂ = v / (1−β2ᵗ)
    /// p ← p − lr·(β1·m̂ + (1−β1)·g/(1−β1ᵗ)) / (√v̂ + ε)
    /// ```
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::invalid(
                "nadam_step",
                format!("{} parameters but {} gradients", params.len(), grads.len()),
            ));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(Error::invalid("nadam_step", "parameter list changed between steps"));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.shape() != g.shape() || m.len() != p.numel() {
                return Err(Error::shape("nadam_step", p.shape(), g.shape()));
            }
        }

        self.t += 1;
        let NAdamConfig {
            lr,
            beta1: b1,
            beta2: b2,
            epsilon,
        } = self.cfg;
        let t = self.t as i32;
        let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                let g = g as f64;
                let mn = b1 * *m as f64 + (1.0 - b1) * g;
                let vn = b2 * *v as f64 + (1.0 - b2) * g * g;
                *m = mn as f32;
                *v = vn as f32;
                let m_hat = mn / c1;
                let v_hat = vn / c2;
                let update = lr * (b1 * m_hat + (1.0 - b1) * g / c1) / (v_hat.sqrt() + epsilon);
                *p = (*p as f64 - update) as f32;
            }
        }
        Ok(())
    }
}
