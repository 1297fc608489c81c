use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelParameters, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: ModelParameters<T>,
    pub v: ModelParameters<T>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ModelParameters<T>) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update. With `freeze_backbone`, backbone tensors
/// and their moments are left untouched.
pub fn adam_step<T: Real>(
    params: &mut ModelParameters<T>,
    grads: &ModelParameters<T>,
    state: &mut AdamState<T>,
    lr: f64,
    config: &AdamConfig,
    freeze_backbone: bool,
) -> Result<()> {
    for g in grads.tensors() {
        if freeze_backbone && g.kind.is_backbone() {
            continue;
        }
        if let Some(pos) = g.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient of {} (element {pos}) at step {}",
                g.name,
                state.t + 1
            )));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (T::of(config.beta1), T::of(config.beta2));
    let (one_b1, one_b2) = (T::of(1.0 - config.beta1), T::of(1.0 - config.beta2));
    let m_corr = T::of(1.0 / (1.0 - config.beta1.powi(t)));
    let v_corr = T::of(1.0 / (1.0 - config.beta2.powi(t)));
    let (lr, eps) = (T::of(lr), T::of(config.epsilon));

    let tensors = params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.m.tensors_mut())
        .zip(state.v.tensors_mut());
    for (((p, g), m), v) in tensors {
        if freeze_backbone && p.kind.is_backbone() {
            continue;
        }
        for (((theta, &grad), mi), vi) in p.data.iter_mut().zip(g.data).zip(m.data.iter_mut()).zip(v.data.iter_mut()) {
            *mi = b1 * *mi + one_b1 * grad;
            *vi = b2 * *vi + one_b2 * grad * grad;
            let m_hat = *mi * m_corr;
            let v_hat = *vi * v_corr;
            *theta = *theta - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
