use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Coupled L2 added to the gradient. Training puts weight decay in the
    /// loss instead and leaves this at 0.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Adam with bias correction; moment buffers start at zero on first use.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Option<Vec<T>>>,
    v: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[(ParamId, Tensor<T>)]) -> Result<()> {
        for (id, g) in grads {
            if !g.all_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite gradient for parameter {}",
                    store.name(*id)
                )));
            }
            if g.shape() != store.value(*id).shape() {
                return Err(Error::shape(
                    "adam_step",
                    format!(
                        "gradient {:?} for parameter {:?}",
                        g.shape(),
                        store.value(*id).shape()
                    ),
                ));
            }
        }
        if self.m.len() < store.len() {
            self.m.resize(store.len(), None);
            self.v.resize(store.len(), None);
        }
        self.step += 1;
        let c = &self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let bc1 = T::lit(1.0 - c.beta1.powi(self.step as i32));
        let bc2 = T::lit(1.0 - c.beta2.powi(self.step as i32));
        let (lr, eps, wd) = (T::lit(c.lr), T::lit(c.eps), T::lit(c.weight_decay));
        for (id, g) in grads {
            let w = store.value_mut(*id).data_mut();
            let m = self.m[id.0].get_or_insert_with(|| vec![T::zero(); w.len()]);
            let v = self.v[id.0].get_or_insert_with(|| vec![T::zero(); w.len()]);
            for k in 0..w.len() {
                let gk = g.data()[k] + wd * w[k];
                m[k] = b1 * m[k] + (T::one() - b1) * gk;
                v[k] = b2 * v[k] + (T::one() - b2) * gk * gk;
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                w[k] = w[k] - lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}
