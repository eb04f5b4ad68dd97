use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

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
            lr: 1e-2,
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

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("invalid Adam settings {self:?}")))
        }
    }
}

/// First and second moment estimates for an ordered parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[&Tensor]) -> Result<Self> {
        config.validate()?;
        let zeros = || {
            params
                .iter()
                .map(|p| Tensor::zeros(p.rows(), p.cols()))
                .collect()
        };
        Ok(Self {
            config,
            m: zeros(),
            v: zeros(),
            t: 0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected update. `names` labels parameters in error messages.
    /// Every gradient is checked before any parameter is touched.
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor],
        grads: &[Tensor],
        names: &[String],
    ) -> Result<()> {
        if params.len() != self.m.len()
            || grads.len() != self.m.len()
            || names.len() != self.m.len()
        {
            return Err(Error::Structural(format!(
                "optimizer tracks {} parameters, got {} params / {} grads / {} names",
                self.m.len(),
                params.len(),
                grads.len(),
                names.len()
            )));
        }
        for (k, ((p, g), name)) in params.iter().zip(grads).zip(names).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.m[k].shape() {
                return Err(Error::Structural(format!(
                    "gradient shape mismatch for {name}"
                )));
            }
            if !g.is_finite() {
                return Err(Error::Numeric(format!("non-finite gradient for {name}")));
            }
        }
        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Convenience wrapper over [`AdamState::step`].
pub fn adam_step(
    state: &mut AdamState,
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    names: &[String],
) -> Result<()> {
    state.step(params, grads, names)
}
