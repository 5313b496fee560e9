//! Turning raw bucket hits into an active neuron set.
//!
//! Three strategies are supported:
//!
//! * **Vanilla**: probe tables in random order and union whole buckets until
//!   at least `beta` distinct ids are collected or every table was probed.
//! * **TopK**: count how many of the `L` buckets contain each id and keep
//!   the `beta` most frequent (ties to the smaller id).
//! * **HardThreshold**: keep every id seen in at least `min_freq` buckets.
//!
//! Frequencies are counted in a flat array indexed by neuron id, reset
//! through the list of touched ids so each call costs `O(ids touched)`.

use rand::Rng;
use thiserror::Error;

use crate::table::RawCandidates;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SamplingStrategy {
    Vanilla,
    TopK,
    HardThreshold,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub strategy: SamplingStrategy,
    /// Target number of active neurons.
    pub beta: usize,
    /// Minimum bucket count for [`SamplingStrategy::HardThreshold`].
    pub min_freq: usize,
}

impl SamplerConfig {
    pub fn vanilla(beta: usize) -> Self {
        Self {
            strategy: SamplingStrategy::Vanilla,
            beta,
            min_freq: 1,
        }
    }

    pub fn top_k(beta: usize) -> Self {
        Self {
            strategy: SamplingStrategy::TopK,
            beta,
            min_freq: 1,
        }
    }

    pub fn hard_threshold(min_freq: usize) -> Self {
        Self {
            strategy: SamplingStrategy::HardThreshold,
            beta: 1,
            min_freq,
        }
    }

    pub fn validate(&self, num_tables: usize) -> Result<(), SamplerError> {
        if self.beta == 0 {
            return Err(SamplerError::InvalidConfig("beta must be at least 1".into()));
        }
        if self.min_freq == 0 || self.min_freq > num_tables {
            return Err(SamplerError::InvalidConfig(format!(
                "min_freq must lie in [1, {num_tables}]"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SamplerError {
    #[error("invalid sampler config: {0}")]
    InvalidConfig(String),
    #[error("parameter out of range: {0}")]
    OutOfRange(String),
    #[error("no closed-form retrieval probability for {0:?}")]
    NoClosedForm(SamplingStrategy),
}

/// Active set for one input plus how it was obtained.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleReport {
    pub active_ids: Vec<u32>,
    pub tables_probed: usize,
    /// `(id, count)` over the probed tables, in first-seen order.
    pub freq: Vec<(u32, u32)>,
}

/// Reusable counting buffers, one per worker.
#[derive(Debug, Clone, Default)]
pub struct SamplerScratch {
    counts: Vec<u32>,
    touched: Vec<u32>,
    order: Vec<usize>,
}

impl SamplerScratch {
    pub fn new(width: usize) -> Self {
        Self {
            counts: vec![0; width],
            touched: Vec::new(),
            order: Vec::new(),
        }
    }

    #[inline]
    fn bump(&mut self, id: u32) -> u32 {
        let i = id as usize;
        if i >= self.counts.len() {
            self.counts.resize(i + 1, 0);
        }
        let c = &mut self.counts[i];
        if *c == 0 {
            self.touched.push(id);
        }
        *c += 1;
        *c
    }

    fn drain_freq(&mut self) -> Vec<(u32, u32)> {
        let out = self
            .touched
            .iter()
            .map(|&id| (id, self.counts[id as usize]))
            .collect();
        self.reset();
        out
    }

    fn reset(&mut self) {
        for &id in &self.touched {
            self.counts[id as usize] = 0;
        }
        self.touched.clear();
    }

    fn count_all(&mut self, raw: &RawCandidates<'_>) {
        for bucket in &raw.buckets {
            for &id in *bucket {
                self.bump(id);
            }
        }
    }
}

pub fn sample<R: Rng + ?Sized>(
    raw: &RawCandidates<'_>,
    cfg: &SamplerConfig,
    rng: &mut R,
    scratch: &mut SamplerScratch,
) -> SampleReport {
    match cfg.strategy {
        SamplingStrategy::Vanilla => vanilla_sample(raw, cfg, rng, scratch),
        SamplingStrategy::TopK => topk_sample(raw, cfg, scratch),
        SamplingStrategy::HardThreshold => hard_threshold_sample(raw, cfg, scratch),
    }
}

/// Unions whole buckets from randomly ordered tables until `beta` distinct
/// ids are collected. Buckets are never truncated.
pub fn vanilla_sample<R: Rng + ?Sized>(
    raw: &RawCandidates<'_>,
    cfg: &SamplerConfig,
    rng: &mut R,
    scratch: &mut SamplerScratch,
) -> SampleReport {
    let l = raw.num_tables();
    scratch.order.clear();
    scratch.order.extend(0..l);
    let mut active = Vec::new();
    let mut probed = 0;
    while probed < l {
        // incremental Fisher-Yates: only draw as many tables as we probe
        let pick = rng.gen_range(probed..l);
        scratch.order.swap(probed, pick);
        let table = scratch.order[probed];
        probed += 1;
        for &id in raw.buckets[table] {
            if scratch.bump(id) == 1 {
                active.push(id);
            }
        }
        if active.len() >= cfg.beta {
            break;
        }
    }
    SampleReport {
        active_ids: active,
        tables_probed: probed,
        freq: scratch.drain_freq(),
    }
}

/// The `beta` ids with the highest bucket counts, ordered by count
/// descending and then id ascending.
pub fn topk_sample(raw: &RawCandidates<'_>, cfg: &SamplerConfig, scratch: &mut SamplerScratch) -> SampleReport {
    scratch.count_all(raw);
    let freq = scratch.drain_freq();
    let mut ranked = freq.clone();
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(cfg.beta);
    SampleReport {
        active_ids: ranked.into_iter().map(|(id, _)| id).collect(),
        tables_probed: raw.num_tables(),
        freq,
    }
}

/// Every id present in at least `min_freq` buckets.
pub fn hard_threshold_sample(
    raw: &RawCandidates<'_>,
    cfg: &SamplerConfig,
    scratch: &mut SamplerScratch,
) -> SampleReport {
    scratch.count_all(raw);
    let m = cfg.min_freq as u32;
    let freq = scratch.drain_freq();
    let active_ids = freq.iter().filter(|&&(_, c)| c >= m).map(|&(id, _)| id).collect();
    SampleReport {
        active_ids,
        tables_probed: raw.num_tables(),
        freq,
    }
}

/// Strategy-specific parameter of [`retrieval_probability`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProbeParam {
    /// Vanilla: number of tables probed.
    TablesProbed(usize),
    /// HardThreshold: minimum bucket count.
    MinFreq(usize),
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Closed-form probability that a neuron with per-function collision
/// probability `p` ends up in the active set.
///
/// * Vanilla with `tau` probed tables: `q^tau * (1-q)^(L-tau)` where
///   `q = p^K` (the neuron hits exactly the probed tables).
/// * HardThreshold with threshold `m`:
///   `sum_{i=m}^{L} C(L,i) q^i (1-q)^(L-i)`.
pub fn retrieval_probability(
    strategy: SamplingStrategy,
    p: f64,
    k: usize,
    l: usize,
    param: ProbeParam,
) -> Result<f64, SamplerError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(SamplerError::OutOfRange(format!("p = {p} not in [0, 1]")));
    }
    if k == 0 || l == 0 {
        return Err(SamplerError::OutOfRange("K and L must be at least 1".into()));
    }
    let q = p.powi(k as i32);
    match (strategy, param) {
        (SamplingStrategy::Vanilla, ProbeParam::TablesProbed(tau)) => {
            if tau > l {
                return Err(SamplerError::OutOfRange(format!("tau = {tau} > L = {l}")));
            }
            Ok(q.powi(tau as i32) * (1.0 - q).powi((l - tau) as i32))
        }
        (SamplingStrategy::HardThreshold, ProbeParam::MinFreq(m)) => {
            if m > l {
                return Err(SamplerError::OutOfRange(format!("m = {m} > L = {l}")));
            }
            let term = |i: usize| binomial(l, i) * q.powi(i as i32) * (1.0 - q).powi((l - i) as i32);
            // sum whichever side is small so rounding cannot break monotonicity near 1
            let tail = if q * (l as f64) < m as f64 {
                (m..=l).map(term).sum::<f64>()
            } else {
                1.0 - (0..m).map(term).sum::<f64>()
            };
            Ok(tail.clamp(0.0, 1.0))
        }
        (SamplingStrategy::TopK, _) => Err(SamplerError::NoClosedForm(SamplingStrategy::TopK)),
        (s, p) => Err(SamplerError::OutOfRange(format!("{p:?} does not apply to {s:?}"))),
    }
}
