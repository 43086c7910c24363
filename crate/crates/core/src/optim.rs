use crate::error::{HudError, Result};
use crate::params::ParameterStore;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled (AdamW) weight decay. Zero gives plain Adam.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// One bias-corrected Adam(W) update over every non-frozen parameter.
/// Gradients are read, not cleared.
pub fn adam_step(store: &mut ParameterStore, cfg: &AdamConfig) -> Result<()> {
    if cfg.lr.is_nan() || cfg.lr < 0.0 || !(0.0..1.0).contains(&cfg.beta1) || !(0.0..1.0).contains(&cfg.beta2) {
        return Err(HudError::InvalidArgument(format!("bad Adam hyper-parameters {cfg:?}")));
    }
    store.step += 1;
    let t = store.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (_, p) in store.iter_mut() {
        if p.frozen {
            continue;
        }
        let grad = p.grad.data();
        let (m, v, w) = (p.m.data_mut(), p.v.data_mut(), p.value.data_mut());
        // Moments and values are separate buffers; index loop keeps the borrows simple.
        for i in 0..grad.len() {
            let g = grad[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            w[i] -= cfg.lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * w[i]);
        }
    }
    Ok(())
}
