use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::HashFamilyConfig;
use crate::sparse::SparseVector;

/// Fractional bits of the fixed-point accumulator used for projections.
const FIXED_FRAC_BITS: i32 = 48;

/// Converts a value to the 2^-48 fixed-point grid used by SimHash.
///
/// Projections are accumulated as exact integer sums, so a dot product
/// maintained by incremental updates is bit-identical to one recomputed
/// from scratch. Magnitudes beyond 2^60 saturate.
#[inline]
pub fn fixed_point(x: f64) -> i128 {
    const SCALE: f64 = (1u64 << FIXED_FRAC_BITS) as f64;
    const LIMIT: f64 = 1.152_921_504_606_847e18; // 2^60
    (x.clamp(-LIMIT, LIMIT) * SCALE).round() as i128
}

/// One coordinate of a weight vector that moved from `old` to `new`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightChange {
    pub index: u32,
    pub old: f32,
    pub new: f32,
}

/// Signed sparse random projections.
///
/// Each of the `K * L` projections has `round(d * sparsity)` nonzero entries
/// (at least one) at distinct indices, each `+1` or `-1`. Entries are stored
/// both per projection and per input dimension; hashing walks the input's
/// nonzeros through the per-dimension index.
#[derive(Debug, Clone)]
pub struct SimHash {
    num_hashes: usize,
    dim: usize,
    projections: Vec<Vec<(u32, bool)>>,
    // CSR over input dimensions: entries hold (projection << 1) | negative
    dim_offsets: Vec<u32>,
    dim_entries: Vec<u32>,
}

impl SimHash {
    pub(crate) fn new(config: &HashFamilyConfig) -> Self {
        let dim = config.dim;
        let num_hashes = config.num_hashes();
        let nnz = ((dim as f64 * config.simhash_sparsity).round() as usize).clamp(1, dim);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut projections = Vec::with_capacity(num_hashes);
        for _ in 0..num_hashes {
            let mut idx: Vec<u32> = sample(&mut rng, dim, nnz).into_iter().map(|i| i as u32).collect();
            idx.sort_unstable();
            projections.push(idx.into_iter().map(|i| (i, rng.gen::<bool>())).collect::<Vec<_>>());
        }

        let mut counts = vec![0u32; dim + 1];
        for proj in &projections {
            for &(i, _) in proj {
                counts[i as usize + 1] += 1;
            }
        }
        for i in 0..dim {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut entries = vec![0u32; counts[dim] as usize];
        for (p, proj) in projections.iter().enumerate() {
            for &(i, neg) in proj {
                let slot = &mut fill[i as usize];
                entries[*slot as usize] = ((p as u32) << 1) | neg as u32;
                *slot += 1;
            }
        }
        Self {
            num_hashes,
            dim,
            projections,
            dim_offsets: counts,
            dim_entries: entries,
        }
    }

    pub fn num_hashes(&self) -> usize {
        self.num_hashes
    }

    /// Stored `(index, negative)` entries of projection `p`.
    pub fn projection(&self, p: usize) -> &[(u32, bool)] {
        &self.projections[p]
    }

    #[inline]
    fn entries_for(&self, dim: u32) -> &[u32] {
        let lo = self.dim_offsets[dim as usize] as usize;
        let hi = self.dim_offsets[dim as usize + 1] as usize;
        &self.dim_entries[lo..hi]
    }

    /// Fixed-point projection values `r . v` for every projection.
    pub fn dots(&self, v: &SparseVector) -> Vec<i128> {
        let mut dots = vec![0i128; self.num_hashes];
        for (i, x) in v.iter() {
            self.accumulate(&mut dots, i, fixed_point(x));
        }
        dots
    }

    /// Projection values of a dense weight row.
    pub fn dots_dense(&self, w: &[f32]) -> Vec<i128> {
        debug_assert_eq!(w.len(), self.dim);
        let mut dots = vec![0i128; self.num_hashes];
        for (i, &x) in w.iter().enumerate() {
            if x != 0.0 {
                self.accumulate(&mut dots, i as u32, fixed_point(x as f64));
            }
        }
        dots
    }

    #[inline]
    fn accumulate(&self, dots: &mut [i128], dim: u32, q: i128) {
        for &e in self.entries_for(dim) {
            let p = (e >> 1) as usize;
            if e & 1 == 1 {
                dots[p] -= q;
            } else {
                dots[p] += q;
            }
        }
    }

    /// Applies coordinate changes to cached projection values, touching only
    /// projections that store a nonzero at a changed coordinate.
    pub fn apply_changes(&self, dots: &mut [i128], changes: &[WeightChange]) {
        for c in changes {
            let dq = fixed_point(c.new as f64) - fixed_point(c.old as f64);
            if dq != 0 {
                self.accumulate(dots, c.index, dq);
            }
        }
    }

    /// Bit per projection: 1 when the projection value is positive.
    pub fn codes_from_dots(dots: &[i128]) -> Vec<u32> {
        dots.iter().map(|&d| (d > 0) as u32).collect()
    }

    pub fn codes(&self, v: &SparseVector) -> Vec<u32> {
        Self::codes_from_dots(&self.dots(v))
    }
}
