use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

use super::graph::{Grads, ParamStore};
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adaptive-moment optimizer with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<F> {
    pub cfg: AdamConfig,
    pub m: Vec<Tensor<F>>,
    pub v: Vec<Tensor<F>>,
    /// Number of updates applied so far.
    pub t: u64,
}

impl<F: Scalar> Adam<F> {
    pub fn new(store: &ParamStore<F>, cfg: AdamConfig) -> Self {
        let zeros = || {
            store
                .entries()
                .iter()
                .map(|e| Tensor::zeros(e.value.shape))
                .collect()
        };
        Adam {
            cfg,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn step(&mut self, store: &mut ParamStore<F>, grads: &Grads<F>, lr: f64) {
        self.t += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let t = self.t as i32;
        let step = lr * (1.0 - b2.powi(t)).sqrt() / (1.0 - b1.powi(t));
        let (b1f, b2f, eps, step) = (F::lit(b1), F::lit(b2), F::lit(self.cfg.eps), F::lit(step));
        let one = F::one();
        for (i, entry) in store.entries_mut().iter_mut().enumerate() {
            let g = &grads.tensors[i].data;
            let m = &mut self.m[i].data;
            let v = &mut self.v[i].data;
            for (j, p) in entry.value.data.iter_mut().enumerate() {
                m[j] = b1f * m[j] + (one - b1f) * g[j];
                v[j] = b2f * v[j] + (one - b2f) * g[j] * g[j];
                *p -= step * m[j] / (v[j].sqrt() + eps);
            }
        }
    }
}
