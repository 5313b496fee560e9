use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{densify, HashFamilyConfig, EMPTY_BIN};
use crate::sparse::SparseVector;

/// Densified one-permutation minhash over a top-k binarization.
///
/// The input is binarized to the indices of its `k` largest values, the
/// index set is pushed through a single permutation of `[0, d)`, and the
/// permuted range is split into `K * L` bins of `ceil(d / (K*L))` slots.
/// Each bin's code is the smallest offset hit inside it.
#[derive(Debug, Clone)]
pub struct Doph {
    num_hashes: usize,
    top_k: usize,
    /// input dimension -> permuted position
    position: Vec<u32>,
    bin_width: usize,
    densify_multiplier: u64,
}

#[derive(PartialEq)]
struct Ranked(f64, u32);

impl Eq for Ranked {}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ranked {
    // larger value wins, then smaller index
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(other.1.cmp(&self.1))
    }
}

impl Doph {
    pub(crate) fn new(config: &HashFamilyConfig) -> Self {
        let dim = config.dim;
        let num_hashes = config.num_hashes();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut perm: Vec<u32> = (0..dim as u32).collect();
        perm.shuffle(&mut rng);
        let mut position = vec![0u32; dim];
        for (pos, &d) in perm.iter().enumerate() {
            position[d as usize] = pos as u32;
        }
        Self {
            num_hashes,
            top_k: config.doph_top_k,
            position,
            bin_width: dim.div_ceil(num_hashes),
            densify_multiplier: rng.gen::<u64>() | 1,
        }
    }

    pub fn bin_width(&self) -> usize {
        self.bin_width
    }

    pub fn densify_multiplier(&self) -> u64 {
        self.densify_multiplier
    }

    /// Permuted position of input dimension `d`.
    pub fn position(&self, d: u32) -> u32 {
        self.position[d as usize]
    }

    /// Indices of the `k` largest stored values (all nonzeros when fewer),
    /// selected with a size-`k` min-heap. Ties keep the smaller index.
    pub fn binarize(&self, v: &SparseVector) -> Vec<u32> {
        if v.nnz() <= self.top_k {
            return v.indices().to_vec();
        }
        let mut heap: BinaryHeap<Reverse<Ranked>> = BinaryHeap::with_capacity(self.top_k + 1);
        for (i, x) in v.iter() {
            let r = Ranked(x, i);
            if heap.len() < self.top_k {
                heap.push(Reverse(r));
            } else if heap.peek().is_some_and(|Reverse(min)| r > *min) {
                heap.pop();
                heap.push(Reverse(r));
            }
        }
        let mut out: Vec<u32> = heap.into_iter().map(|Reverse(r)| r.1).collect();
        out.sort_unstable();
        out
    }

    /// Minhash codes of an explicit index set.
    pub fn codes_for_set(&self, set: &[u32]) -> Vec<u32> {
        let mut codes = vec![EMPTY_BIN; self.num_hashes];
        for &i in set {
            let pos = self.position[i as usize] as usize;
            let bin = pos / self.bin_width;
            let offset = (pos % self.bin_width) as u32;
            if offset < codes[bin] {
                codes[bin] = offset;
            }
        }
        densify(&mut codes, self.densify_multiplier);
        codes
    }

    pub fn codes(&self, v: &SparseVector) -> Vec<u32> {
        self.codes_for_set(&self.binarize(v))
    }
}
