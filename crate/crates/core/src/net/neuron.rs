use std::sync::atomic::{AtomicBool, AtomicU32, Ordering};

use crate::hogwild::{AtomicF32, AtomicF64, HogwildVec};

/// One unit of a layer.
///
/// Parameters are shared by all workers without locks. The three
/// batch-length arrays hold per-instance state so that workers handling
/// different batch slots never write the same cell.
#[derive(Debug)]
pub struct Neuron {
    pub(crate) weights: HogwildVec,
    pub(crate) bias: AtomicF32,
    /// first moments of weights, then bias
    pub(crate) adam_m: HogwildVec,
    /// second moments of weights, then bias
    pub(crate) adam_v: HogwildVec,
    pub(crate) steps: AtomicU32,
    active: Box<[AtomicBool]>,
    activation: Box<[AtomicF64]>,
    gradient: Box<[AtomicF64]>,
}

impl Neuron {
    pub(crate) fn new(weights: &[f32], bias: f32, batch_size: usize) -> Self {
        let fan_in = weights.len();
        Self {
            weights: HogwildVec::from_slice(weights),
            bias: AtomicF32::new(bias),
            adam_m: HogwildVec::zeros(fan_in + 1),
            adam_v: HogwildVec::zeros(fan_in + 1),
            steps: AtomicU32::new(0),
            active: (0..batch_size).map(|_| AtomicBool::new(false)).collect(),
            activation: (0..batch_size).map(|_| AtomicF64::new(0.0)).collect(),
            gradient: (0..batch_size).map(|_| AtomicF64::new(0.0)).collect(),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> Vec<f32> {
        self.weights.to_vec()
    }

    #[inline]
    pub fn weight(&self, i: usize) -> f32 {
        self.weights.get(i)
    }

    pub fn bias(&self) -> f32 {
        self.bias.load()
    }

    pub fn set_weights(&self, w: &[f32]) {
        self.weights.copy_from(w);
    }

    pub fn set_bias(&self, b: f32) {
        self.bias.store(b);
    }

    /// Adam steps applied to this neuron so far.
    pub fn steps(&self) -> u32 {
        self.steps.load(Ordering::Relaxed)
    }

    pub fn moments(&self) -> (Vec<f32>, Vec<f32>) {
        (self.adam_m.to_vec(), self.adam_v.to_vec())
    }

    pub fn is_active(&self, slot: usize) -> bool {
        self.active[slot].load(Ordering::Relaxed)
    }

    pub fn activation(&self, slot: usize) -> f64 {
        self.activation[slot].load()
    }

    pub fn gradient(&self, slot: usize) -> f64 {
        self.gradient[slot].load()
    }

    #[inline]
    pub(crate) fn activate(&self, slot: usize, value: f64) {
        self.active[slot].store(true, Ordering::Relaxed);
        self.activation[slot].store(value);
        self.gradient[slot].store(0.0);
    }

    #[inline]
    pub(crate) fn set_gradient(&self, slot: usize, g: f64) {
        self.gradient[slot].store(g);
    }

    #[inline]
    pub(crate) fn add_gradient(&self, slot: usize, g: f64) {
        self.gradient[slot].add(g);
    }

    #[inline]
    pub(crate) fn release(&self, slot: usize) {
        self.active[slot].store(false, Ordering::Relaxed);
        self.activation[slot].store(0.0);
        self.gradient[slot].store(0.0);
    }

    /// `bias + sum_i w[i] * x[i]`, accumulated in index order.
    #[inline]
    pub(crate) fn pre_activation(&self, indices: &[u32], values: &[f64]) -> f64 {
        let mut z = self.bias.load() as f64;
        for (&i, &x) in indices.iter().zip(values) {
            z += self.weights.get(i as usize) as f64 * x;
        }
        z
    }
}
