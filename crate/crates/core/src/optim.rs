//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
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
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<F>>,
    pub v: Vec<Vec<F>>,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(store: &ParamStore<F>, config: AdamConfig) -> Self {
        let zeros = || store.iter().map(|p| vec![F::zero(); p.tensor.numel()]).collect();
        AdamState {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One update from the gradients held in `store`. Every parameter must
    /// carry a gradient.
    pub fn step(&mut self, store: &mut ParamStore<F>) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(Error::shape("adam_step", &[self.m.len()], &[store.len()]));
        }
        if let Some(p) = store.iter().find(|p| p.tensor.grad().is_none()) {
            return Err(Error::contract(format!("parameter {} has no gradient", p.name)));
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        let (b1, b2) = (F::of(beta1), F::of(beta2));
        let (one_b1, one_b2) = (F::of(1.0 - beta1), F::of(1.0 - beta2));
        let (lr_t, eps) = (F::of(lr / c1), F::of(eps));
        let inv_sqrt_c2 = F::of(1.0 / c2.sqrt());
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let grad = p.tensor.grad().expect("checked above").to_vec();
            for (((x, g), m), v) in p.tensor.data_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + one_b1 * *g;
                *v = b2 * *v + one_b2 * *g * *g;
                *x -= lr_t * *m / ((*v).sqrt() * inv_sqrt_c2 + eps);
            }
        }
        Ok(())
    }
}
