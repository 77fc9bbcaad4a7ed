use super::matrix::DenseMatrix;
use crate::error::{DrimError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
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

/// A trainable tensor with its gradient accumulator and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSlot {
    pub name: String,
    pub value: DenseMatrix,
    pub grad: DenseMatrix,
    pub first_moment: DenseMatrix,
    pub second_moment: DenseMatrix,
    pub step: u64,
}

impl ParamSlot {
    pub fn new(name: impl Into<String>, value: DenseMatrix) -> Self {
        let (r, c) = value.shape();
        Self {
            name: name.into(),
            value,
            grad: DenseMatrix::zeros(r, c),
            first_moment: DenseMatrix::zeros(r, c),
            second_moment: DenseMatrix::zeros(r, c),
            step: 0,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    /// Bias-corrected Adam update from the accumulated gradient, which is
    /// zeroed afterwards. A non-finite gradient aborts without touching the
    /// value or moments.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        if let Some(pos) = self.grad.as_slice().iter().position(|g| !g.is_finite()) {
            let cols = self.grad.cols().max(1);
            return Err(DrimError::NonFinite {
                param: self.name.clone(),
                detail: format!(
                    "gradient[{}, {}] = {}",
                    pos / cols,
                    pos % cols,
                    self.grad.as_slice()[pos]
                ),
            });
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - cfg.beta1.powf(t);
        let bc2 = 1.0 - cfg.beta2.powf(t);
        let values = self.value.as_mut_slice();
        let grads = self.grad.as_mut_slice();
        let m = self.first_moment.as_mut_slice();
        let v = self.second_moment.as_mut_slice();
        for i in 0..values.len() {
            let g = grads[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            values[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            grads[i] = 0.0;
        }
        Ok(())
    }
}
