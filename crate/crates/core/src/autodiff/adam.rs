use std::borrow::{Borrow, BorrowMut};

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates for one parameter list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new<P: Borrow<Tensor>>(params: &[P]) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|p| Tensor::zeros(p.borrow().rows(), p.borrow().cols()))
                .collect()
        };
        Self {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// One bias-corrected Adam update applied in place.
pub fn adam_step<P: BorrowMut<Tensor>>(
    params: &mut [P],
    grads: &[Tensor],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Usage(format!(
            "adam: {} params, {} grads, {} state slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        let p: &Tensor = p.borrow();
        if p.shape() != g.shape() {
            return Err(Error::dim("adam_step", p.shape(), g.shape()));
        }
        if p.shape() != m.shape() {
            return Err(Error::dim("adam_state", p.shape(), m.shape()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        let pd = p.borrow_mut().data_mut();
        for k in 0..pd.len() {
            let gk = g.data()[k];
            let mk = &mut m.data_mut()[k];
            *mk = cfg.beta1 * *mk + (1.0 - cfg.beta1) * gk;
            let vk = &mut v.data_mut()[k];
            *vk = cfg.beta2 * *vk + (1.0 - cfg.beta2) * gk * gk;
            let m_hat = m.data()[k] / bc1;
            let v_hat = v.data()[k] / bc2;
            pd[k] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
