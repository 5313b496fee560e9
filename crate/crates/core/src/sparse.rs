//! Sparse index/value vectors.
//!
//! [`SparseVector`] is the one representation used for dataset features,
//! layer inputs and hash-function inputs. Indices are kept strictly
//! increasing and explicit zeros are never stored.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SparseError {
    #[error("index/value length mismatch ({indices} indices, {values} values)")]
    LengthMismatch { indices: usize, values: usize },
    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: u32, dim: usize },
    #[error("duplicate index {0}")]
    DuplicateIndex(u32),
    #[error("non-finite value at index {0}")]
    NonFinite(u32),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVector {
    indices: Vec<u32>,
    values: Vec<f64>,
    dim: usize,
}

impl SparseVector {
    /// An all-zero vector of dimension `dim`.
    pub fn zeros(dim: usize) -> Self {
        Self {
            indices: Vec::new(),
            values: Vec::new(),
            dim,
        }
    }

    /// Builds a vector from unsorted `(index, value)` pairs. Zero values are
    /// dropped; duplicate indices are rejected.
    pub fn from_pairs(
        dim: usize,
        pairs: impl IntoIterator<Item = (u32, f64)>,
    ) -> Result<Self, SparseError> {
        let mut pairs: Vec<(u32, f64)> = pairs.into_iter().collect();
        pairs.sort_unstable_by_key(|&(i, _)| i);
        let mut indices = Vec::with_capacity(pairs.len());
        let mut values = Vec::with_capacity(pairs.len());
        let mut last: Option<u32> = None;
        for (i, v) in pairs {
            if i as usize >= dim {
                return Err(SparseError::IndexOutOfRange { index: i, dim });
            }
            if last == Some(i) {
                return Err(SparseError::DuplicateIndex(i));
            }
            last = Some(i);
            if !v.is_finite() {
                return Err(SparseError::NonFinite(i));
            }
            if v != 0.0 {
                indices.push(i);
                values.push(v);
            }
        }
        Ok(Self {
            indices,
            values,
            dim,
        })
    }

    /// Builds a vector from parallel index/value arrays that must already be
    /// strictly increasing.
    pub fn from_sorted(dim: usize, indices: Vec<u32>, values: Vec<f64>) -> Result<Self, SparseError> {
        if indices.len() != values.len() {
            return Err(SparseError::LengthMismatch {
                indices: indices.len(),
                values: values.len(),
            });
        }
        for (k, &i) in indices.iter().enumerate() {
            if i as usize >= dim {
                return Err(SparseError::IndexOutOfRange { index: i, dim });
            }
            if k > 0 && indices[k - 1] >= i {
                return Err(SparseError::DuplicateIndex(i));
            }
            if !values[k].is_finite() {
                return Err(SparseError::NonFinite(i));
            }
        }
        let mut v = Self {
            indices,
            values,
            dim,
        };
        v.drop_zeros();
        Ok(v)
    }

    pub fn from_dense(values: &[f64]) -> Self {
        let mut indices = Vec::new();
        let mut vals = Vec::new();
        for (i, &v) in values.iter().enumerate() {
            if v != 0.0 {
                indices.push(i as u32);
                vals.push(v);
            }
        }
        Self {
            indices,
            values: vals,
            dim: values.len(),
        }
    }

    pub fn from_dense_f32(values: &[f32]) -> Self {
        let mut indices = Vec::new();
        let mut vals = Vec::new();
        for (i, &v) in values.iter().enumerate() {
            if v != 0.0 {
                indices.push(i as u32);
                vals.push(v as f64);
            }
        }
        Self {
            indices,
            values: vals,
            dim: values.len(),
        }
    }

    fn drop_zeros(&mut self) {
        if self.values.iter().all(|&v| v != 0.0) {
            return;
        }
        let mut w = 0;
        for r in 0..self.values.len() {
            if self.values[r] != 0.0 {
                self.indices[w] = self.indices[r];
                self.values[w] = self.values[r];
                w += 1;
            }
        }
        self.indices.truncate(w);
        self.values.truncate(w);
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    #[inline]
    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    /// Value at `index` (zero when not stored).
    pub fn get(&self, index: u32) -> f64 {
        match self.indices.binary_search(&index) {
            Ok(k) => self.values[k],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (i, v) in self.iter() {
            out[i as usize] = v;
        }
        out
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Scales in place to unit L2 norm; the zero vector is left alone.
    pub fn normalize_l2(&mut self) {
        let n = self.norm();
        if n > 0.0 {
            for v in &mut self.values {
                *v /= n;
            }
            self.drop_zeros();
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for v in &mut out.values {
            *v *= factor;
        }
        out.drop_zeros();
        out
    }

    /// Dot product against a dense slice of the same dimension.
    pub fn dot_dense(&self, dense: &[f64]) -> f64 {
        self.iter().map(|(i, v)| v * dense[i as usize]).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn from_pairs_sorts_and_drops_zeros() {
        let v = SparseVector::from_pairs(5, [(3, 1.0), (0, 2.0), (1, 0.0)]).unwrap();
        assert_eq!(v.indices(), &[0, 3]);
        assert_eq!(v.values(), &[2.0, 1.0]);
        assert_eq!(v.get(1), 0.0);
        assert_eq!(v.get(3), 1.0);
    }

    #[test]
    fn rejects_out_of_range_and_duplicates() {
        assert_eq!(
            SparseVector::from_pairs(2, [(2, 1.0)]),
            Err(SparseError::IndexOutOfRange { index: 2, dim: 2 })
        );
        assert_eq!(
            SparseVector::from_pairs(4, [(1, 1.0), (1, 2.0)]),
            Err(SparseError::DuplicateIndex(1))
        );
        assert!(SparseVector::from_sorted(4, vec![2, 1], vec![1.0, 1.0]).is_err());
        assert!(SparseVector::from_sorted(4, vec![1], vec![f64::NAN]).is_err());
    }

    #[test]
    fn normalize_zero_vector_is_noop() {
        let mut v = SparseVector::zeros(3);
        v.normalize_l2();
        assert!(v.is_empty());
        let mut w = SparseVector::from_dense(&[3.0, 0.0, 4.0]);
        w.normalize_l2();
        assert!((w.norm() - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn invariants_hold(pairs in proptest::collection::btree_map(0u32..64, -5.0f64..5.0, 0..20)) {
            let v = SparseVector::from_pairs(64, pairs.clone()).unwrap();
            prop_assert!(v.indices().windows(2).all(|w| w[0] < w[1]));
            prop_assert!(v.values().iter().all(|&x| x != 0.0));
            let dense = v.to_dense();
            prop_assert_eq!(SparseVector::from_dense(&dense), v);
        }
    }
}
