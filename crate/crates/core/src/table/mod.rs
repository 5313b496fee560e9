//! Per-layer `(K, L)` hash tables over neuron ids.
//!
//! [`LshTables`] owns a [`HashFamily`], `L` tables of fixed-capacity
//! [`Bucket`]s and a [`RebuildSchedule`]. Tables are filled by [`build`],
//! read concurrently by [`query`] and refreshed by [`maybe_rebuild`] at batch
//! boundaries. Entries are never deleted between rebuilds.
//!
//! For SimHash the per-neuron projection values are cached, so a rebuild
//! only revisits the weight coordinates that changed since the last hash.
//!
//! [`build`]: LshTables::build
//! [`query`]: LshTables::query
//! [`maybe_rebuild`]: LshTables::maybe_rebuild

mod bucket;
mod schedule;

pub use bucket::{Bucket, InsertPolicy};
pub use schedule::RebuildSchedule;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustc_hash::FxHashMap;
use thiserror::Error;

use crate::hash::{HashCodes, HashError, HashFamily, HashFamilyConfig, SimHash, WeightChange};
use crate::sparse::SparseVector;

/// Key widths up to this many bits use a flat bucket array.
const DENSE_KEY_BITS: u32 = 12;

pub const DEFAULT_BUCKET_CAPACITY: usize = 128;

#[derive(Debug, Error, PartialEq)]
pub enum TableError {
    #[error(transparent)]
    Hash(#[from] HashError),
    #[error("weight dimension mismatch for neuron {neuron} (expected {expected}, got {got})")]
    DimensionMismatch {
        neuron: usize,
        expected: usize,
        got: usize,
    },
    #[error("no cached projections for neuron {0}")]
    CacheMissing(usize),
    #[error("incremental updates need a SimHash family")]
    NotSimHash,
    #[error("bucket capacity must be at least 1")]
    ZeroCapacity,
}

/// Read access to the weight rows of a layer's neurons.
pub trait NeuronWeights: Sync {
    fn num_neurons(&self) -> usize;
    fn weights(&self, id: usize) -> Vec<f32>;
}

impl NeuronWeights for [Vec<f32>] {
    fn num_neurons(&self) -> usize {
        self.len()
    }

    fn weights(&self, id: usize) -> Vec<f32> {
        self[id].clone()
    }
}

impl NeuronWeights for Vec<Vec<f32>> {
    fn num_neurons(&self) -> usize {
        self.len()
    }

    fn weights(&self, id: usize) -> Vec<f32> {
        self[id].clone()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableConfig {
    pub bucket_capacity: usize,
    pub policy: InsertPolicy,
    /// Iterations before the first rebuild.
    pub n0: u64,
    /// Decay constant stretching later rebuild periods.
    pub lambda: f64,
    /// Seeds the reservoir draws.
    pub seed: u64,
}

impl Default for TableConfig {
    fn default() -> Self {
        Self {
            bucket_capacity: DEFAULT_BUCKET_CAPACITY,
            policy: InsertPolicy::Fifo,
            n0: 50,
            lambda: 0.05,
            seed: 0,
        }
    }
}

/// Per-table bucket contents for one query.
#[derive(Debug, Clone)]
pub struct RawCandidates<'a> {
    pub buckets: Vec<&'a [u32]>,
}

impl<'a> RawCandidates<'a> {
    pub fn new(buckets: Vec<&'a [u32]>) -> Self {
        Self { buckets }
    }

    pub fn from_owned(buckets: &'a [Vec<u32>]) -> Self {
        Self {
            buckets: buckets.iter().map(Vec::as_slice).collect(),
        }
    }

    pub fn num_tables(&self) -> usize {
        self.buckets.len()
    }

    pub fn total_ids(&self) -> usize {
        self.buckets.iter().map(|b| b.len()).sum()
    }
}

#[derive(Debug, Clone)]
enum Store {
    Flat(Vec<Bucket>),
    Map(FxHashMap<u64, Bucket>),
}

#[derive(Debug, Clone)]
struct Table {
    store: Store,
    rng: ChaCha8Rng,
}

impl Table {
    fn new(key_bits: u32) -> Self {
        let store = if key_bits <= DENSE_KEY_BITS {
            Store::Flat(vec![Bucket::default(); 1 << key_bits])
        } else {
            Store::Map(FxHashMap::default())
        };
        Self {
            store,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    fn clear(&mut self, seed: u64) {
        match &mut self.store {
            Store::Flat(b) => b.iter_mut().for_each(Bucket::clear),
            Store::Map(m) => m.clear(),
        }
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    #[inline]
    fn insert(&mut self, key: u64, id: u32, capacity: usize, policy: InsertPolicy) -> bool {
        let bucket = match &mut self.store {
            Store::Flat(b) => &mut b[key as usize],
            Store::Map(m) => m.entry(key).or_default(),
        };
        bucket.insert(id, capacity, policy, &mut self.rng)
    }

    #[inline]
    fn bucket(&self, key: u64) -> Option<&Bucket> {
        match &self.store {
            Store::Flat(b) => b.get(key as usize),
            Store::Map(m) => m.get(&key),
        }
    }

    fn occupancy(&self) -> usize {
        match &self.store {
            Store::Flat(b) => b.iter().map(Bucket::occupancy).sum(),
            Store::Map(m) => m.values().map(Bucket::occupancy).sum(),
        }
    }
}

#[derive(Debug, Clone, Default)]
struct SimHashCache {
    /// `[neuron * K*L + projection]`
    dots: Vec<i128>,
    /// weights as of the last hash
    snapshot: Vec<Vec<f32>>,
}

#[derive(Debug, Clone)]
pub struct LshTables {
    family: HashFamily,
    config: TableConfig,
    tables: Vec<Table>,
    schedule: RebuildSchedule,
    cache: Option<SimHashCache>,
    builds: u64,
}

impl LshTables {
    pub fn new(hash: HashFamilyConfig, config: TableConfig) -> Result<Self, TableError> {
        if config.bucket_capacity == 0 {
            return Err(TableError::ZeroCapacity);
        }
        let family = HashFamily::new(hash)?;
        let key_bits = family.key_bits();
        let tables = (0..family.num_tables()).map(|_| Table::new(key_bits)).collect();
        let schedule = RebuildSchedule::new(config.n0, config.lambda);
        Ok(Self {
            family,
            config,
            tables,
            schedule,
            cache: None,
            builds: 0,
        })
    }

    pub fn family(&self) -> &HashFamily {
        &self.family
    }

    pub fn config(&self) -> &TableConfig {
        &self.config
    }

    pub fn schedule(&self) -> &RebuildSchedule {
        &self.schedule
    }

    pub fn num_tables(&self) -> usize {
        self.tables.len()
    }

    /// Number of full builds/rebuilds performed so far.
    pub fn builds(&self) -> u64 {
        self.builds
    }

    /// Stored ids summed over all buckets of table `t`.
    pub fn occupancy(&self, t: usize) -> usize {
        self.tables[t].occupancy()
    }

    /// The bucket of table `t` under `key`, if it was ever touched.
    pub fn bucket(&self, t: usize, key: u64) -> Option<&Bucket> {
        self.tables[t].bucket(key)
    }

    fn check_dims(&self, id: usize, w: &[f32]) -> Result<(), TableError> {
        if w.len() != self.family.dim() {
            return Err(TableError::DimensionMismatch {
                neuron: id,
                expected: self.family.dim(),
                got: w.len(),
            });
        }
        Ok(())
    }

    /// Hashes every neuron and inserts its id into one bucket per table,
    /// replacing all previous contents.
    pub fn build<W: NeuronWeights + ?Sized>(&mut self, neurons: &W) -> Result<(), TableError> {
        let n = neurons.num_neurons();
        let rows: Vec<Vec<f32>> = (0..n).into_par_iter().map(|id| neurons.weights(id)).collect();
        for (id, w) in rows.iter().enumerate() {
            self.check_dims(id, w)?;
        }
        let codes: Vec<HashCodes> = match self.family.as_simhash() {
            Some(s) => {
                let per = s.num_hashes();
                let dots: Vec<Vec<i128>> = rows.par_iter().map(|w| s.dots_dense(w)).collect();
                let codes = dots
                    .par_iter()
                    .map(|d| self.family.pack(&SimHash::codes_from_dots(d)))
                    .collect();
                let mut flat = Vec::with_capacity(n * per);
                dots.into_iter().for_each(|d| flat.extend(d));
                self.cache = Some(SimHashCache {
                    dots: flat,
                    snapshot: rows,
                });
                codes
            }
            None => rows
                .par_iter()
                .map(|w| self.family.hash(&SparseVector::from_dense_f32(w)))
                .collect::<Result<_, _>>()?,
        };
        self.insert_all(&codes);
        Ok(())
    }

    /// Clears the tables and inserts neuron `i` under `codes[i]`. Tables are
    /// filled in parallel, each one in neuron-id order.
    pub fn insert_all(&mut self, codes: &[HashCodes]) {
        self.fill(codes.len(), |i| (i as u32, &codes[i]));
    }

    /// Clears the tables and inserts only the listed `(id, codes)` pairs,
    /// in order. Useful for setting up a known table state.
    pub fn insert_entries(&mut self, entries: &[(u32, HashCodes)]) {
        self.fill(entries.len(), |i| (entries[i].0, &entries[i].1));
    }

    fn fill<'c, F>(&mut self, n: usize, entry: F)
    where
        F: Fn(usize) -> (u32, &'c HashCodes) + Sync,
    {
        self.builds += 1;
        let capacity = self.config.bucket_capacity;
        let policy = self.config.policy;
        let base = self.config.seed ^ self.builds.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        self.tables.par_iter_mut().enumerate().for_each(|(t, table)| {
            table.clear(base.wrapping_add(t as u64));
            for i in 0..n {
                let (id, c) = entry(i);
                table.insert(c.0[t], id, capacity, policy);
            }
        });
    }

    /// Bucket contents matching `input` in each table. Exactly `L` buckets
    /// are probed.
    pub fn query(&self, input: &SparseVector) -> Result<RawCandidates<'_>, TableError> {
        let codes = self.family.hash(input)?;
        Ok(self.query_codes(&codes))
    }

    pub fn query_codes(&self, codes: &HashCodes) -> RawCandidates<'_> {
        RawCandidates {
            buckets: self
                .tables
                .iter()
                .zip(codes.keys())
                .map(|(t, &key)| t.bucket(key).map(Bucket::ids).unwrap_or(&[]))
                .collect(),
        }
    }

    /// Rebuilds the tables when `iteration` has reached the schedule.
    pub fn maybe_rebuild<W: NeuronWeights + ?Sized>(
        &mut self,
        iteration: u64,
        neurons: &W,
    ) -> Result<bool, TableError> {
        if !self.schedule.is_due(iteration) {
            return Ok(false);
        }
        self.rebuild(neurons)?;
        self.schedule.advance();
        Ok(true)
    }

    /// Re-hashes all neurons now. SimHash families reuse the cached
    /// projection values and only apply coordinates that changed.
    pub fn rebuild<W: NeuronWeights + ?Sized>(&mut self, neurons: &W) -> Result<(), TableError> {
        let n = neurons.num_neurons();
        let cache_usable = matches!(&self.cache, Some(c) if c.snapshot.len() == n);
        if !cache_usable {
            return self.build(neurons);
        }
        let simhash = self.family.as_simhash().expect("cache implies simhash");
        let per = simhash.num_hashes();
        let dim = self.family.dim();
        let cache = self.cache.as_mut().expect("checked above");
        let results: Vec<Result<(), TableError>> = cache
            .dots
            .par_chunks_mut(per)
            .zip(cache.snapshot.par_iter_mut())
            .enumerate()
            .map(|(id, (dots, snap))| {
                let w = neurons.weights(id);
                if w.len() != dim {
                    return Err(TableError::DimensionMismatch {
                        neuron: id,
                        expected: dim,
                        got: w.len(),
                    });
                }
                let changes: Vec<WeightChange> = snap
                    .iter()
                    .zip(&w)
                    .enumerate()
                    .filter(|(_, (o, n))| o.to_bits() != n.to_bits())
                    .map(|(i, (&old, &new))| WeightChange {
                        index: i as u32,
                        old,
                        new,
                    })
                    .collect();
                simhash.apply_changes(dots, &changes);
                *snap = w;
                Ok(())
            })
            .collect();
        results.into_iter().collect::<Result<Vec<()>, _>>()?;
        let codes: Vec<HashCodes> = cache
            .dots
            .par_chunks(per)
            .map(|d| self.family.pack(&SimHash::codes_from_dots(d)))
            .collect();
        self.insert_all(&codes);
        Ok(())
    }

    /// Applies sparse weight changes of one neuron to its cached SimHash
    /// projections and returns the resulting keys. Tables are not touched.
    pub fn incremental_simhash_update(
        &mut self,
        neuron: usize,
        changes: &[WeightChange],
    ) -> Result<HashCodes, TableError> {
        let simhash = self.family.as_simhash().ok_or(TableError::NotSimHash)?;
        let per = simhash.num_hashes();
        let cache = self.cache.as_mut().ok_or(TableError::CacheMissing(neuron))?;
        if neuron >= cache.snapshot.len() {
            return Err(TableError::CacheMissing(neuron));
        }
        let dots = &mut cache.dots[neuron * per..(neuron + 1) * per];
        simhash.apply_changes(dots, changes);
        let snap = &mut cache.snapshot[neuron];
        for c in changes {
            snap[c.index as usize] = c.new;
        }
        Ok(self.family.pack(&SimHash::codes_from_dots(dots)))
    }

    /// Keys of `neuron` as currently cached (SimHash only).
    pub fn cached_codes(&self, neuron: usize) -> Option<HashCodes> {
        let s = self.family.as_simhash()?;
        let per = s.num_hashes();
        let cache = self.cache.as_ref()?;
        let dots = cache.dots.get(neuron * per..(neuron + 1) * per)?;
        Some(self.family.pack(&SimHash::codes_from_dots(dots)))
    }
}
