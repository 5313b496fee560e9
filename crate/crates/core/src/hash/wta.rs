use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{densify, HashFamilyConfig, EMPTY_BIN};
use crate::sparse::SparseVector;

const NO_BIN: u32 = u32::MAX;

/// Permutation layout shared by WTA and DWTA.
///
/// Instead of one permutation per hash function, `ceil(K*L / (d/m))`
/// permutations of the `d` input dimensions are drawn and each is cut into
/// `d/m` bins of `m` consecutive positions. Bin `j` (counting across
/// permutations) yields sub-code `j`: the position within the bin holding
/// the largest input value. Ties go to the smallest position.
#[derive(Debug, Clone)]
pub struct WtaPermutations {
    dim: usize,
    bin_size: usize,
    num_hashes: usize,
    num_perms: usize,
    /// `[perm * dim + input_dim]` -> global bin, or `NO_BIN`
    bin_of: Vec<u32>,
    /// `[perm * dim + input_dim]` -> position within its bin
    pos_of: Vec<u32>,
    /// `[bin * m + pos]` -> input dimension
    bin_dims: Vec<u32>,
    densify_multiplier: u64,
}

impl WtaPermutations {
    pub(crate) fn new(config: &HashFamilyConfig) -> Self {
        let dim = config.dim;
        let m = config.wta_bin_size;
        let num_hashes = config.num_hashes();
        let bins_per_perm = dim / m;
        let num_perms = num_hashes.div_ceil(bins_per_perm);

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut bin_of = vec![NO_BIN; num_perms * dim];
        let mut pos_of = vec![0u32; num_perms * dim];
        let mut bin_dims = vec![0u32; num_hashes * m];
        let mut perm: Vec<u32> = (0..dim as u32).collect();
        for p in 0..num_perms {
            perm.shuffle(&mut rng);
            for (position, &d) in perm.iter().enumerate() {
                let local_bin = position / m;
                if local_bin >= bins_per_perm {
                    continue;
                }
                let global = p * bins_per_perm + local_bin;
                if global >= num_hashes {
                    continue;
                }
                let pos = position % m;
                bin_of[p * dim + d as usize] = global as u32;
                pos_of[p * dim + d as usize] = pos as u32;
                bin_dims[global * m + pos] = d;
            }
        }
        Self {
            dim,
            bin_size: m,
            num_hashes,
            num_perms,
            bin_of,
            pos_of,
            bin_dims,
            densify_multiplier: rng.gen::<u64>() | 1,
        }
    }

    pub fn num_permutations(&self) -> usize {
        self.num_perms
    }

    pub fn bin_size(&self) -> usize {
        self.bin_size
    }

    /// Input dimensions of bin `j`, in bin-position order.
    pub fn bin(&self, j: usize) -> &[u32] {
        &self.bin_dims[j * self.bin_size..(j + 1) * self.bin_size]
    }

    pub fn densify_multiplier(&self) -> u64 {
        self.densify_multiplier
    }

    /// Dense WTA: every dimension of every bin is compared, zeros included.
    pub fn wta_codes(&self, v: &SparseVector) -> Vec<u32> {
        let dense = v.to_dense();
        (0..self.num_hashes)
            .map(|j| {
                let mut best = 0usize;
                let dims = self.bin(j);
                for (pos, &d) in dims.iter().enumerate().skip(1) {
                    if dense[d as usize] > dense[dims[best] as usize] {
                        best = pos;
                    }
                }
                best as u32
            })
            .collect()
    }

    /// Sparse WTA over the nonzeros of `v`, `O(nnz * permutations)`; bins
    /// without any nonzero are densified.
    pub fn dwta_codes(&self, v: &SparseVector) -> Vec<u32> {
        let mut codes = vec![EMPTY_BIN; self.num_hashes];
        let mut best = vec![f64::NEG_INFINITY; self.num_hashes];
        for (i, x) in v.iter() {
            for p in 0..self.num_perms {
                let slot = p * self.dim + i as usize;
                let bin = self.bin_of[slot];
                if bin == NO_BIN {
                    continue;
                }
                let b = bin as usize;
                let pos = self.pos_of[slot];
                if x > best[b] || (x == best[b] && pos < codes[b]) {
                    best[b] = x;
                    codes[b] = pos;
                }
            }
        }
        densify(&mut codes, self.densify_multiplier);
        codes
    }
}
