//! Lock-free shared storage for parameters.
//!
//! Weights and optimizer state are read and written by many workers at once
//! without locks. Each cell is an atomic with relaxed ordering, so a
//! concurrent read-modify-write can lose an update but never tears a value.

use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};

#[derive(Debug, Default)]
#[repr(transparent)]
pub struct AtomicF32(AtomicU32);

impl AtomicF32 {
    pub fn new(v: f32) -> Self {
        Self(AtomicU32::new(v.to_bits()))
    }

    #[inline]
    pub fn load(&self) -> f32 {
        f32::from_bits(self.0.load(Ordering::Relaxed))
    }

    #[inline]
    pub fn store(&self, v: f32) {
        self.0.store(v.to_bits(), Ordering::Relaxed)
    }
}

#[derive(Debug, Default)]
#[repr(transparent)]
pub struct AtomicF64(AtomicU64);

impl AtomicF64 {
    pub fn new(v: f64) -> Self {
        Self(AtomicU64::new(v.to_bits()))
    }

    #[inline]
    pub fn load(&self) -> f64 {
        f64::from_bits(self.0.load(Ordering::Relaxed))
    }

    #[inline]
    pub fn store(&self, v: f64) {
        self.0.store(v.to_bits(), Ordering::Relaxed)
    }

    /// Unsynchronized `+=`; concurrent adds may be lost.
    #[inline]
    pub fn add(&self, v: f64) {
        self.store(self.load() + v)
    }
}

/// Fixed-length array of [`AtomicF32`].
#[derive(Debug)]
pub struct HogwildVec(Box<[AtomicF32]>);

impl HogwildVec {
    pub fn zeros(len: usize) -> Self {
        Self((0..len).map(|_| AtomicF32::new(0.0)).collect())
    }

    pub fn from_slice(values: &[f32]) -> Self {
        Self(values.iter().map(|&v| AtomicF32::new(v)).collect())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize) -> f32 {
        self.0[i].load()
    }

    #[inline]
    pub fn set(&self, i: usize, v: f32) {
        self.0[i].store(v)
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.0.iter().map(AtomicF32::load).collect()
    }

    pub fn copy_from(&self, values: &[f32]) {
        assert_eq!(values.len(), self.len());
        for (cell, &v) in self.0.iter().zip(values) {
            cell.store(v);
        }
    }
}
