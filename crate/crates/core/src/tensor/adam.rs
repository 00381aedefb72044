use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParameterStore};
use crate::{math, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-6,
        }
    }
}

/// Adam with bias correction. Moment buffers are kept per parameter.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    moments: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to every trainable parameter of `store`.
    pub fn step(&mut self, store: &mut ParameterStore, grads: &Gradients) -> Result<()> {
        let ids: Vec<_> = store.ids().filter(|&id| store.is_trainable(id)).collect();
        for &id in &ids {
            match grads.get(id) {
                Some(g) if g.len() == store.value(id).len() => {}
                Some(_) => {
                    return Err(Error::dim(
                        "adam",
                        alloc::format!("gradient length for `{}`", store.name(id)),
                    ))
                }
                None => {
                    return Err(Error::contract(alloc::format!(
                        "missing gradient for `{}`",
                        store.name(id)
                    )))
                }
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - math::powi(beta1, t);
        let bc2 = 1.0 - math::powi(beta2, t);
        if self.moments.len() < store.len() {
            self.moments.resize(store.len(), None);
        }
        for id in ids {
            let g = grads.get(id).unwrap_or_default();
            let value = store.value_mut(id).data_mut();
            let (m, v) = self.moments[id.index()]
                .get_or_insert_with(|| (vec![0.0; value.len()], vec![0.0; value.len()]));
            for i in 0..value.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                value[i] -= lr * m_hat / (math::sqrt(v_hat) + eps);
            }
        }
        Ok(())
    }
}
