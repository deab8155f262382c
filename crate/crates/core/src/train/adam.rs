use crate::error::{Error, Result};
use crate::tensor::{Param, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    /// `(first moment, second moment)` per parameter, in declaration order.
    moments: Vec<(Tensor, Tensor)>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: Vec::new(),
        }
    }

    /// Restores a saved state.
    pub fn with_state(config: AdamConfig, step: u64, moments: Vec<(Tensor, Tensor)>) -> Self {
        Self {
            config,
            step,
            moments,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> &[(Tensor, Tensor)] {
        &self.moments
    }

    /// Applies one update using each parameter's accumulated gradient.
    pub fn step(&mut self, params: &mut [&mut Param]) -> Result<()> {
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|p| {
                    let shape = p.value().shape().to_vec();
                    (Tensor::zeros(shape.clone()), Tensor::zeros(shape))
                })
                .collect();
        }
        if self.moments.len() != params.len() {
            return Err(crate::error::contract!(
                "optimizer tracks {} parameters, got {}",
                self.moments.len(),
                params.len()
            ));
        }
        for (p, (m, _)) in params.iter().zip(&self.moments) {
            if p.value().shape() != m.shape() {
                return Err(Error::Shape {
                    op: "adam step",
                    left: p.value().shape().to_vec(),
                    right: m.shape().to_vec(),
                });
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (p, (m, v)) in params.iter_mut().zip(&mut self.moments) {
            let grad = p.grad().data().to_vec();
            let value = p.value_mut().data_mut();
            for (((w, g), mi), vi) in value
                .iter_mut()
                .zip(&grad)
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * g;
                *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
