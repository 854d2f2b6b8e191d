use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

impl Adam {
    /// Settings used for both GAN networks.
    pub fn gan() -> Self {
        Adam {
            learning_rate: 0.0002,
            beta1: 0.5,
            ..Adam::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmsProp {
    pub learning_rate: f64,
    pub rho: f64,
    pub epsilon: f64,
}

impl Default for RmsProp {
    fn default() -> Self {
        RmsProp {
            learning_rate: 0.001,
            rho: 0.9,
            epsilon: 1e-7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Adam(Adam),
    RmsProp(RmsProp),
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| v > 0.0 && v < 1.0;
        let ok = match self {
            OptimizerConfig::Adam(a) => {
                a.learning_rate > 0.0 && in_unit(a.beta1) && in_unit(a.beta2) && a.epsilon > 0.0
            }
            OptimizerConfig::RmsProp(r) => {
                r.learning_rate > 0.0 && in_unit(r.rho) && r.epsilon > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid optimizer settings: {self:?}")))
        }
    }

    /// Per-parameter state buffers (Adam: m and v; RMSprop: v).
    pub fn slot_count(&self) -> usize {
        match self {
            OptimizerConfig::Adam(_) => 2,
            OptimizerConfig::RmsProp(_) => 1,
        }
    }
}

/// One Adam update with bias correction. `t` is the 1-based step index.
pub fn adam_step<T: Scalar>(
    cfg: &Adam,
    t: u64,
    params: &mut [T],
    grads: &[T],
    m: &mut [T],
    v: &mut [T],
) {
    assert!(t >= 1, "adam step index starts at 1");
    let b1 = T::from_f64_lossy(cfg.beta1);
    let b2 = T::from_f64_lossy(cfg.beta2);
    let one = T::one();
    let c1 = T::from_f64_lossy(1.0 - cfg.beta1.powi(t as i32));
    let c2 = T::from_f64_lossy(1.0 - cfg.beta2.powi(t as i32));
    let lr = T::from_f64_lossy(cfg.learning_rate);
    let eps = T::from_f64_lossy(cfg.epsilon);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = b1 * m[i] + (one - b1) * g;
        v[i] = b2 * v[i] + (one - b2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// `v <- rho v + (1 - rho) g^2; p -= lr g / (sqrt(v) + eps)`.
pub fn rmsprop_step<T: Scalar>(cfg: &RmsProp, params: &mut [T], grads: &[T], v: &mut [T]) {
    let rho = T::from_f64_lossy(cfg.rho);
    let one = T::one();
    let lr = T::from_f64_lossy(cfg.learning_rate);
    let eps = T::from_f64_lossy(cfg.epsilon);
    for i in 0..params.len() {
        let g = grads[i];
        v[i] = rho * v[i] + (one - rho) * g * g;
        params[i] -= lr * g / (v[i].sqrt() + eps);
    }
}
