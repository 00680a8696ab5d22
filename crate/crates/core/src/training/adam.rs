//! Adam with bias-corrected moment estimates.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, keyed by parameter name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: BTreeMap<String, Vec<T>>,
    pub v: BTreeMap<String, Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new() -> Self {
        Self {
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }
}

/// Applies one Adam update to every parameter that has a gradient.
pub fn adam_step<T: Scalar>(
    params: &mut BTreeMap<String, Tensor<T>>,
    grads: &BTreeMap<String, Tensor<T>>,
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    for (name, g) in grads {
        let p = params
            .get(name)
            .ok_or_else(|| Error::MissingParameter(name.clone()))?;
        if p.shape() != g.shape() {
            return Err(Error::ElementCount {
                shape: p.shape().to_vec(),
                expected: p.len(),
                actual: g.len(),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c = |v: f64| T::from_f64_lossy(v);
    let (b1, b2) = (c(cfg.beta1), c(cfg.beta2));
    let bias1 = T::one() - c(cfg.beta1.powi(t));
    let bias2 = T::one() - c(cfg.beta2.powi(t));
    let (lr, eps) = (c(cfg.learning_rate), c(cfg.eps));
    for (name, g) in grads {
        let p = params.get_mut(name).expect("checked above");
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| vec![T::zero(); g.len()]);
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| vec![T::zero(); g.len()]);
        for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (T::one() - b1) * gi;
            *vi = b2 * *vi + (T::one() - b2) * gi * gi;
            let m_hat = *mi / bias1;
            let v_hat = *vi / bias2;
            *pi -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
