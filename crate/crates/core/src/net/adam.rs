use std::sync::atomic::Ordering;

use super::{NetError, Neuron};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Gradient of one neuron restricted to the coordinates it touched.
#[derive(Debug, Clone, Copy)]
pub struct NeuronGrad<'a> {
    pub indices: &'a [u32],
    pub values: &'a [f64],
    pub bias: f64,
}

/// Sparse Adam step on one neuron.
///
/// Only the listed coordinates (and the bias) are updated; moments of
/// untouched coordinates are left as they are. Bias correction uses the
/// neuron's own step counter. Arithmetic is done in `f64` and stored as
/// `f32`; concurrent callers may overwrite each other's writes.
pub fn apply_update(neuron: &Neuron, grad: &NeuronGrad<'_>, cfg: &AdamConfig) -> Result<(), NetError> {
    let fan_in = neuron.fan_in();
    if let Some(&bad) = grad.indices.iter().find(|&&i| i as usize >= fan_in) {
        return Err(NetError::IndexOutOfRange { index: bad, len: fan_in });
    }
    let t = neuron.steps.fetch_add(1, Ordering::Relaxed) as i32 + 1;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let step = |slot: usize, param: f64, g: f64| -> f64 {
        let m = cfg.beta1 * neuron.adam_m.get(slot) as f64 + (1.0 - cfg.beta1) * g;
        let v = cfg.beta2 * neuron.adam_v.get(slot) as f64 + (1.0 - cfg.beta2) * g * g;
        neuron.adam_m.set(slot, m as f32);
        neuron.adam_v.set(slot, v as f32);
        param - cfg.learning_rate * (m / c1) / ((v / c2).sqrt() + cfg.eps)
    };
    for (&i, &g) in grad.indices.iter().zip(grad.values) {
        let i = i as usize;
        let w = step(i, neuron.weights.get(i) as f64, g);
        neuron.weights.set(i, w as f32);
    }
    let b = step(fan_in, neuron.bias.load() as f64, grad.bias);
    neuron.bias.store(b as f32);
    Ok(())
}
