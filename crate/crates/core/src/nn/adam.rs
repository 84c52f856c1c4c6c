use serde::{Deserialize, Serialize};

use super::params::ParamStore;
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
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment buffers for every parameter of one store, in store order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(store: &ParamStore<T>, config: AdamConfig) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|p| vec![T::zero(); p.tensor.len()])
                .collect()
        };
        Self {
            config,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn first_moment(&self, index: usize) -> &[T] {
        &self.first[index]
    }
}

/// One bias-corrected Adam update of every parameter that holds a gradient.
///
/// Gradients are read from the tensors' gradient slots and left in place.
pub fn adam_step<T: Scalar>(store: &mut ParamStore<T>, state: &mut AdamState<T>) {
    state.step += 1;
    let cfg = state.config;
    let t = state.step as i32;
    let (b1, b2) = (T::c(cfg.beta1), T::c(cfg.beta2));
    let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
    let corr1 = T::one() / (T::one() - b1.powi(t));
    let corr2 = T::one() / (T::one() - b2.powi(t));
    let (lr, eps) = (T::c(cfg.lr), T::c(cfg.eps));
    for (i, p) in store.iter_mut().enumerate() {
        let Some(grad) = p.tensor.grad().map(<[T]>::to_vec) else {
            continue;
        };
        let (m, v) = (&mut state.first[i], &mut state.second[i]);
        for (((w, &g), m), v) in p
            .tensor
            .data_mut()
            .iter_mut()
            .zip(&grad)
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *m = b1 * *m + one_b1 * g;
            *v = b2 * *v + one_b2 * g * g;
            let m_hat = *m * corr1;
            let v_hat = *v * corr2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}
