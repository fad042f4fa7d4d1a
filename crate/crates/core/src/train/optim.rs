// SPDX-License-Identifier: Apache-2.0
//! AdamW with decoupled weight decay.
//!
//! Per parameter, at step `t` (1-based):
//!
//! ```text
//! p  <- p * (1 - lr * wd)          (weights and embeddings only)
//! m  <- b1 m + (1 - b1) g
//! v  <- b2 v + (1 - b2) g^2
//! p  <- p - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
//! ```

use ndarray::Zip;
use serde::{Deserialize, Serialize};

use super::{Result, TrainError};
use crate::nn::{Gradients, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub m: Gradients,
    pub v: Gradients,
    pub t: u64,
}

impl AdamWState {
    pub fn new(store: &ParamStore) -> Self {
        Self {
            m: Gradients::zeros_like(store),
            v: Gradients::zeros_like(store),
            t: 0,
        }
    }
}

pub fn adamw_step(
    store: &mut ParamStore,
    grads: &Gradients,
    state: &mut AdamWState,
    lr: f64,
    config: &AdamWConfig,
) -> Result<()> {
    if grads.len() != store.len() || state.m.len() != store.len() {
        return Err(TrainError::ShapeMismatch(format!(
            "{} gradients / {} moments for {} parameters",
            grads.len(),
            state.m.len(),
            store.len()
        )));
    }
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for &id in &ids {
        let p = store.get(id);
        if grads.get(id).dim() != p.value.dim() || state.m.get(id).dim() != p.value.dim() {
            return Err(TrainError::ShapeMismatch(format!("gradient for `{}`", p.name)));
        }
        if grads.get(id).iter().any(|g| !g.is_finite()) {
            return Err(TrainError::NonFiniteGradient(p.name.clone()));
        }
    }

    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - config.beta1.powi(t);
    let bc2 = 1.0 - config.beta2.powi(t);
    let (b1, b2, eps) = (config.beta1, config.beta2, config.eps);
    for id in ids {
        let decay = if store.get(id).kind.decays() {
            1.0 - lr * config.weight_decay
        } else {
            1.0
        };
        let g = grads.get(id);
        let m = state.m.get_mut(id);
        Zip::from(&mut *m)
            .and(g)
            .for_each(|m, &g| *m = b1 * *m + (1.0 - b1) * g);
        let v = state.v.get_mut(id);
        Zip::from(&mut *v)
            .and(g)
            .for_each(|v, &g| *v = b2 * *v + (1.0 - b2) * g * g);
        let (m, v) = (state.m.get(id), state.v.get(id));
        Zip::from(store.value_mut(id)).and(m).and(v).for_each(|p, &m, &v| {
            *p *= decay;
            *p -= lr * (m / bc1) / ((v / bc2).sqrt() + eps);
        });
    }
    Ok(())
}
