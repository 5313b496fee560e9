//! LSH families that map vectors to bucket keys.
//!
//! A family holds `K * L` random hash functions. Each one produces a small
//! integer sub-code; the `K` sub-codes of a table are concatenated into one
//! 64-bit bucket key, giving `L` keys per input ([`HashCodes`]).
//!
//! Four families are available:
//!
//! * [`SimHash`]: signed sparse random projections (cosine similarity),
//! * WTA: winner-take-all over permuted bins, for dense inputs,
//! * DWTA: WTA that only visits nonzeros and densifies empty bins,
//! * [`Doph`]: densified one-permutation minhash over a top-k binarization.
//!
//! All random state is drawn once from the configured seed, so two families
//! built from equal configs are interchangeable.

mod doph;
mod simhash;
mod wta;

pub use doph::Doph;
pub use simhash::{fixed_point, SimHash, WeightChange};
pub use wta::WtaPermutations;

use crate::sparse::SparseVector;
use thiserror::Error;

/// Attempts made by densification before giving up on an empty bin.
pub const DENSIFY_MAX_ATTEMPTS: u32 = 100;
/// Code used when densification finds no occupied donor bin.
pub const DENSIFY_SENTINEL: u32 = 0;

#[derive(Debug, Error, PartialEq)]
pub enum HashError {
    #[error("invalid hash config: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch (expected {expected}, got {got})")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("operation requires a {expected:?} family, this one is {actual:?}")]
    WrongFamily { expected: HashKind, actual: HashKind },
    #[error("bucket key needs {0} bits, more than 64")]
    KeyOverflow(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HashKind {
    SimHash,
    Wta,
    Dwta,
    Doph,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HashFamilyConfig {
    pub family: HashKind,
    /// `K`: sub-codes concatenated per table key.
    pub k_per_table: usize,
    /// `L`: number of tables.
    pub num_tables: usize,
    pub dim: usize,
    /// Fraction of nonzero entries in each SimHash projection.
    pub simhash_sparsity: f64,
    /// Elements per WTA/DWTA permutation bin.
    pub wta_bin_size: usize,
    /// Values kept by the DOPH top-k binarization.
    pub doph_top_k: usize,
    pub seed: u64,
}

impl HashFamilyConfig {
    pub fn simhash(k: usize, l: usize, dim: usize, seed: u64) -> Self {
        Self {
            family: HashKind::SimHash,
            k_per_table: k,
            num_tables: l,
            dim,
            simhash_sparsity: 1.0 / 3.0,
            wta_bin_size: 8,
            doph_top_k: 32,
            seed,
        }
    }

    pub fn with_family(mut self, family: HashKind) -> Self {
        self.family = family;
        self
    }

    pub fn num_hashes(&self) -> usize {
        self.k_per_table * self.num_tables
    }

    fn validate(&self) -> Result<(), HashError> {
        let bad = |msg: &str| Err(HashError::InvalidConfig(msg.to_string()));
        if self.k_per_table == 0 || self.num_tables == 0 || self.dim == 0 {
            return bad("K, L and dim must all be at least 1");
        }
        if self.dim > u32::MAX as usize {
            return bad("dim must fit in 32 bits");
        }
        match self.family {
            HashKind::SimHash => {
                if !(self.simhash_sparsity > 0.0 && self.simhash_sparsity <= 1.0) {
                    return bad("simhash_sparsity must lie in (0, 1]");
                }
            }
            HashKind::Wta | HashKind::Dwta => {
                if self.wta_bin_size == 0 || self.wta_bin_size > self.dim {
                    return bad("wta_bin_size must lie in [1, dim]");
                }
            }
            HashKind::Doph => {
                if self.doph_top_k == 0 {
                    return bad("doph_top_k must be at least 1");
                }
            }
        }
        Ok(())
    }
}

/// One bucket key per table.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HashCodes(pub Vec<u64>);

impl HashCodes {
    pub fn keys(&self) -> &[u64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone)]
enum FamilyState {
    SimHash(SimHash),
    Wta(WtaPermutations),
    Doph(Doph),
}

/// `K * L` hash functions of one family plus the key layout.
#[derive(Debug, Clone)]
pub struct HashFamily {
    config: HashFamilyConfig,
    bits_per_code: u32,
    state: FamilyState,
}

/// `ceil(log2(n))`, with `n <= 1` needing no bits.
pub fn bits_for(n: usize) -> u32 {
    if n <= 1 {
        0
    } else {
        usize::BITS - (n - 1).leading_zeros()
    }
}

impl HashFamily {
    pub fn new(config: HashFamilyConfig) -> Result<Self, HashError> {
        config.validate()?;
        let (state, bits_per_code) = match config.family {
            HashKind::SimHash => (FamilyState::SimHash(SimHash::new(&config)), 1),
            HashKind::Wta | HashKind::Dwta => {
                let p = WtaPermutations::new(&config);
                (FamilyState::Wta(p), bits_for(config.wta_bin_size))
            }
            HashKind::Doph => {
                let d = Doph::new(&config);
                let bits = bits_for(d.bin_width());
                (FamilyState::Doph(d), bits)
            }
        };
        let total = bits_per_code as u64 * config.k_per_table as u64;
        if total > 64 {
            return Err(HashError::KeyOverflow(total.min(u32::MAX as u64) as u32));
        }
        Ok(Self {
            config,
            bits_per_code,
            state,
        })
    }

    pub fn config(&self) -> &HashFamilyConfig {
        &self.config
    }

    pub fn kind(&self) -> HashKind {
        self.config.family
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn k(&self) -> usize {
        self.config.k_per_table
    }

    pub fn num_tables(&self) -> usize {
        self.config.num_tables
    }

    pub fn bits_per_code(&self) -> u32 {
        self.bits_per_code
    }

    /// Number of bits in a bucket key.
    pub fn key_bits(&self) -> u32 {
        self.bits_per_code * self.config.k_per_table as u32
    }

    pub fn as_simhash(&self) -> Option<&SimHash> {
        match &self.state {
            FamilyState::SimHash(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_wta(&self) -> Option<&WtaPermutations> {
        match &self.state {
            FamilyState::Wta(w) => Some(w),
            _ => None,
        }
    }

    pub fn as_doph(&self) -> Option<&Doph> {
        match &self.state {
            FamilyState::Doph(d) => Some(d),
            _ => None,
        }
    }

    fn check_dim(&self, v: &SparseVector) -> Result<(), HashError> {
        if v.dim() != self.config.dim {
            return Err(HashError::DimensionMismatch {
                expected: self.config.dim,
                got: v.dim(),
            });
        }
        Ok(())
    }

    /// Concatenates `K` sub-codes per table into `L` keys. The first
    /// sub-code of a table lands in the most significant position.
    pub fn pack(&self, raw: &[u32]) -> HashCodes {
        let k = self.config.k_per_table;
        debug_assert_eq!(raw.len(), k * self.config.num_tables);
        let bits = self.bits_per_code;
        let keys = raw
            .chunks_exact(k)
            .map(|chunk| {
                chunk.iter().fold(0u64, |key, &c| {
                    if bits == 0 {
                        0
                    } else {
                        (key << bits) | c as u64
                    }
                })
            })
            .collect();
        HashCodes(keys)
    }

    /// Raw `K * L` sub-codes using the family's own scan (WTA families
    /// dispatch on [`HashKind::Wta`] vs [`HashKind::Dwta`]).
    pub fn raw_codes(&self, v: &SparseVector) -> Result<Vec<u32>, HashError> {
        self.check_dim(v)?;
        Ok(match (&self.state, self.config.family) {
            (FamilyState::SimHash(s), _) => s.codes(v),
            (FamilyState::Wta(w), HashKind::Wta) => w.wta_codes(v),
            (FamilyState::Wta(w), _) => w.dwta_codes(v),
            (FamilyState::Doph(d), _) => d.codes(v),
        })
    }

    /// Bucket keys for `v` under this family.
    pub fn hash(&self, v: &SparseVector) -> Result<HashCodes, HashError> {
        Ok(self.pack(&self.raw_codes(v)?))
    }

    pub fn simhash_codes(&self, v: &SparseVector) -> Result<HashCodes, HashError> {
        self.check_dim(v)?;
        let s = self.as_simhash().ok_or(self.wrong(HashKind::SimHash))?;
        Ok(self.pack(&s.codes(v)))
    }

    pub fn wta_codes(&self, v: &SparseVector) -> Result<HashCodes, HashError> {
        self.check_dim(v)?;
        let w = self.as_wta().ok_or(self.wrong(HashKind::Wta))?;
        Ok(self.pack(&w.wta_codes(v)))
    }

    pub fn dwta_codes(&self, v: &SparseVector) -> Result<HashCodes, HashError> {
        self.check_dim(v)?;
        let w = self.as_wta().ok_or(self.wrong(HashKind::Dwta))?;
        Ok(self.pack(&w.dwta_codes(v)))
    }

    pub fn doph_codes(&self, v: &SparseVector) -> Result<HashCodes, HashError> {
        self.check_dim(v)?;
        let d = self.as_doph().ok_or(self.wrong(HashKind::Doph))?;
        Ok(self.pack(&d.codes(v)))
    }

    fn wrong(&self, expected: HashKind) -> HashError {
        HashError::WrongFamily {
            expected,
            actual: self.config.family,
        }
    }
}

/// Marker for a bin that saw no input element.
pub(crate) const EMPTY_BIN: u32 = u32::MAX;

/// Fills empty bins by borrowing the code of a donor bin. The donor for bin
/// `j` on attempt `a` is picked by multiply-shift hashing of `(j, a)`;
/// only originally occupied bins may donate.
pub(crate) fn densify(codes: &mut [u32], multiplier: u64) {
    let n = codes.len();
    if codes.iter().all(|&c| c != EMPTY_BIN) {
        return;
    }
    let original = codes.to_vec();
    for j in 0..n {
        if original[j] != EMPTY_BIN {
            continue;
        }
        codes[j] = DENSIFY_SENTINEL;
        for attempt in 0..DENSIFY_MAX_ATTEMPTS {
            let donor = densify_donor(multiplier, j, attempt, n);
            if original[donor] != EMPTY_BIN {
                codes[j] = original[donor];
                break;
            }
        }
    }
}

#[inline]
pub(crate) fn densify_donor(multiplier: u64, bin: usize, attempt: u32, n: usize) -> usize {
    let x = (((bin as u64) + 1) << 8) + attempt as u64;
    ((multiplier.wrapping_mul(x) >> 32) % n as u64) as usize
}
