//! Adam optimizer with bias correction.

use crate::error::{Error, Result};

use super::{DenseNet, Gradients};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 3e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..Default::default() }
    }
}

/// First/second moment accumulators shaped like one network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub(crate) m_w: Vec<Vec<f64>>,
    pub(crate) v_w: Vec<Vec<f64>>,
    pub(crate) m_b: Vec<Vec<f64>>,
    pub(crate) v_b: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(net: &DenseNet, config: AdamConfig) -> Self {
        let m_w: Vec<Vec<f64>> =
            (0..net.num_layers()).map(|l| vec![0.0; net.weights(l).len()]).collect();
        let m_b: Vec<Vec<f64>> =
            (0..net.num_layers()).map(|l| vec![0.0; net.biases(l).len()]).collect();
        AdamState { config, step: 0, v_w: m_w.clone(), v_b: m_b.clone(), m_w, m_b }
    }
}

/// One bias-corrected Adam step; `net` and `state` are updated in place.
///
/// Pure in the functional sense: identical (params, grads, state) inputs
/// produce bitwise-identical results.
pub fn adam_step(net: &mut DenseNet, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    if grads.d_w.len() != net.num_layers() {
        return Err(Error::Shape("gradient layer count mismatch".into()));
    }
    for l in 0..net.num_layers() {
        if grads.d_w[l].len() != net.weights(l).len() || grads.d_b[l].len() != net.biases(l).len() {
            return Err(Error::Shape(format!("gradient shape mismatch at layer {l}")));
        }
        if let Some(i) = grads.d_w[l].iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient in layer {l} weights at index {i}"
            )));
        }
        if let Some(i) = grads.d_b[l].iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient in layer {l} biases at index {i}"
            )));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let c = state.config;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);

    for l in 0..net.num_layers() {
        update_block(net.weights_mut(l), &grads.d_w[l], &mut state.m_w[l], &mut state.v_w[l], c, bc1, bc2);
        update_block(net.biases_mut(l), &grads.d_b[l], &mut state.m_b[l], &mut state.v_b[l], c, bc1, bc2);
    }
    Ok(())
}

#[inline]
fn update_block(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    c: AdamConfig,
    bc1: f64,
    bc2: f64,
) {
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
        v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
    }
}
