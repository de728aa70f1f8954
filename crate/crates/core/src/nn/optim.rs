use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Gradients, ParameterSet};
use crate::scalar::Scalar;

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
///
/// Returns the norm measured before clipping.
pub fn clip_grad_norm<F: Scalar>(grads: &mut Gradients<F>, max_norm: F) -> F {
    assert!(max_norm > F::zero(), "max_norm must be positive");
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

/// Adam hyperparameters.
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
            lr: 1e-4,
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

/// One bias-corrected Adam update in place.
pub fn adam_step<F: Scalar>(
    params: &mut ParameterSet<F>,
    grads: &Gradients<F>,
    config: &AdamConfig,
) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::Config("gradients do not match parameter set".into()));
    }
    let (values, m1, m2, step) = params.adam_parts();
    *step += 1;
    let t = *step as i32;
    let b1 = F::of(config.beta1);
    let b2 = F::of(config.beta2);
    let one = F::one();
    let lr = F::of(config.lr);
    let eps = F::of(config.eps);
    let bc1 = one - b1.powi(t);
    let bc2 = one - b2.powi(t);
    for (((p, m), v), g) in values.iter_mut().zip(m1).zip(m2).zip(grads.iter()) {
        if p.shape() != g.shape() {
            return Err(Error::Config("gradient shape mismatch".into()));
        }
        let p = p.data_mut();
        let m = m.data_mut();
        let v = v.data_mut();
        for i in 0..p.len() {
            let gi = g.data()[i];
            m[i] = b1 * m[i] + (one - b1) * gi;
            v[i] = b2 * v[i] + (one - b2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
