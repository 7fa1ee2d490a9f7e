use serde::{Deserialize, Serialize};

use super::{ParameterSet, Result, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
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

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// First/second moment estimates over the flat parameter view, plus the
/// number of completed steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn zeros(len: usize) -> Self {
        Self {
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    state: AdamState,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParameterSet) -> Self {
        Self {
            config,
            state: AdamState::zeros(params.flat_len()),
        }
    }

    pub fn from_state(config: AdamConfig, state: AdamState) -> Self {
        Self { config, state }
    }

    pub fn state(&self) -> &AdamState {
        &self.state
    }

    /// Applies one update from the gradients held in `params`, then zeroes
    /// them. Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, params: &mut ParameterSet) -> Result<()> {
        if params.flat_len() != self.state.m.len() {
            return Err(TensorError::Contract(format!(
                "optimizer state has {} slots, parameters have {}",
                self.state.m.len(),
                params.flat_len()
            )));
        }
        if let Some(bad) = params.iter().find(|p| p.grad().iter().any(|g| !g.is_finite())) {
            return Err(TensorError::NonFinite {
                parameter: bad.name.clone(),
            });
        }
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        self.state.step += 1;
        let t = self.state.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let mut offset = 0;
        for p in params.params_mut() {
            let n = p.value.len();
            let grad = std::mem::take(p.grad_mut());
            let m = &mut self.state.m[offset..offset + n];
            let v = &mut self.state.v[offset..offset + n];
            for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                let g = grad.get(i).copied().unwrap_or(0.0);
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            *p.grad_mut() = vec![0.0; n];
            offset += n;
        }
        Ok(())
    }
}
