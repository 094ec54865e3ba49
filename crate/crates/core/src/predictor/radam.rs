//! Rectified Adam.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, GmcdError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RAdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for RAdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment buffers and step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RAdam {
    pub config: RAdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl RAdam {
    pub fn new(n: usize, config: RAdamConfig) -> Result<Self> {
        let RAdamConfig { beta1, beta2, eps } = config;
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
            return invalid("need beta1, beta2 in [0, 1) and eps > 0");
        }
        Ok(Self {
            config,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        })
    }

    /// One step at learning rate `lr`. Rectification switches on once the
    /// variance tractability length exceeds 5.
    pub fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return invalid("optimizer buffers do not match parameter count");
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(GmcdError::Numeric(format!("non-finite gradient at coordinate {i}")));
        }
        let RAdamConfig { beta1, beta2, eps } = self.config;
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - beta1.powf(t);
        let b2t = beta2.powf(t);
        let bc2 = 1.0 - b2t;
        let rho_inf = 2.0 / (1.0 - beta2) - 1.0;
        let rho_t = rho_inf - 2.0 * t * b2t / bc2;
        let rect = if rho_t > 5.0 {
            Some(((rho_t - 4.0) * (rho_t - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t)).sqrt())
        } else {
            None
        };
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            params[i] -= match rect {
                Some(r) => lr * m_hat * r * bc2.sqrt() / (self.v[i].sqrt() + eps),
                None => lr * m_hat,
            };
        }
        Ok(())
    }
}
