//! Datasets in the extreme-classification text format, mini-batching,
//! precision@k and a synthetic multi-label generator.
//!
//! The format is a header line `N d L` followed by one example per line:
//!
//! ```text
//! 3 5 4
//! 0,2 0:1.5 3:0.25
//! 1 4:1
//! 2,3 1:0.5 2:2 4:-1
//! ```
//!
//! Labels are comma-separated before the first space; an example may have
//! no labels (line starts with a feature) or no features.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::sparse::SparseVector;

#[derive(Debug, Error, PartialEq)]
pub enum DataError {
    #[error("missing header line")]
    MissingHeader,
    #[error("line 1: bad header {0:?}, expected \"N d L\"")]
    BadHeader(String),
    #[error("line {line}: feature index {index} >= {dim}")]
    FeatureIndexOutOfRange { line: usize, index: u64, dim: usize },
    #[error("line {line}: cannot parse {token:?}")]
    BadValue { line: usize, token: String },
    #[error("line {line}: label {label} >= {num_labels}")]
    LabelOutOfRange { line: usize, label: u64, num_labels: usize },
    #[error("line {line}: feature {index} appears twice")]
    DuplicateFeature { line: usize, index: u32 },
    #[error("header declares {declared} examples, found {found}")]
    CountMismatch { declared: usize, found: usize },
    #[error("dataset has no examples")]
    Empty,
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for DataError {
    fn from(e: std::io::Error) -> Self {
        DataError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: SparseVector,
    /// Sorted, deduplicated.
    pub labels: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub num_features: usize,
    pub num_labels: usize,
}

fn parse_header(line: &str) -> Result<(usize, usize, usize), DataError> {
    let bad = || DataError::BadHeader(line.to_string());
    let nums: Vec<usize> = line
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| bad()))
        .collect::<Result<_, _>>()?;
    match nums[..] {
        [n, d, l] if d > 0 && l > 0 => Ok((n, d, l)),
        _ => Err(bad()),
    }
}

fn parse_example(text: &str, line: usize, dim: usize, num_labels: usize) -> Result<Example, DataError> {
    let bad = |token: &str| DataError::BadValue {
        line,
        token: token.to_string(),
    };
    let mut tokens = text.split_whitespace().peekable();
    let mut labels = Vec::new();
    // a line that starts with whitespace has no labels
    let starts_with_labels = !text.starts_with([' ', '\t']);
    if let Some(first) = tokens.peek().copied() {
        if starts_with_labels && !first.contains(':') {
            tokens.next();
            for t in first.split(',').filter(|t| !t.is_empty()) {
                let label: u64 = t.parse().map_err(|_| bad(t))?;
                if label >= num_labels as u64 {
                    return Err(DataError::LabelOutOfRange { line, label, num_labels });
                }
                labels.push(label as u32);
            }
        }
    }
    labels.sort_unstable();
    labels.dedup();

    let mut pairs = Vec::new();
    for t in tokens {
        let (i, v) = t.split_once(':').ok_or_else(|| bad(t))?;
        let index: u64 = i.parse().map_err(|_| bad(t))?;
        let value: f64 = v.parse().map_err(|_| bad(t))?;
        if !value.is_finite() {
            return Err(bad(t));
        }
        if index >= dim as u64 {
            return Err(DataError::FeatureIndexOutOfRange { line, index, dim });
        }
        pairs.push((index as u32, value));
    }
    pairs.sort_by_key(|p| p.0);
    if let Some(w) = pairs.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(DataError::DuplicateFeature { line, index: w[0].0 });
    }
    let (indices, values) = pairs.into_iter().unzip();
    let features = SparseVector::from_sorted(dim, indices, values).expect("validated above");
    Ok(Example { features, labels })
}

impl Dataset {
    /// Parses the text format. LF and CRLF line endings are accepted; empty
    /// lines are skipped, whitespace-only lines are examples with no labels
    /// and no features. Zero-valued features are dropped.
    pub fn parse<R: BufRead>(reader: R) -> Result<Self, DataError> {
        let mut lines = reader.lines().enumerate();
        let (n, dim, num_labels) = loop {
            match lines.next() {
                None => return Err(DataError::MissingHeader),
                Some((_, line)) => {
                    let line = line?;
                    let line = line.trim_end_matches('\r');
                    if !line.trim().is_empty() {
                        break parse_header(line)?;
                    }
                }
            }
        };
        let mut examples = Vec::with_capacity(n.min(1 << 20));
        for (k, line) in lines {
            let line = line?;
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            examples.push(parse_example(line, k + 1, dim, num_labels)?);
        }
        if examples.len() != n {
            return Err(DataError::CountMismatch {
                declared: n,
                found: examples.len(),
            });
        }
        if examples.is_empty() {
            return Err(DataError::Empty);
        }
        Ok(Self {
            examples,
            num_features: dim,
            num_labels,
        })
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        Self::parse(BufReader::new(File::open(path)?))
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<(), DataError> {
        writeln!(w, "{} {} {}", self.examples.len(), self.num_features, self.num_labels)?;
        for ex in &self.examples {
            let labels: Vec<String> = ex.labels.iter().map(u32::to_string).collect();
            let mut line = labels.join(",");
            for (i, v) in ex.features.iter() {
                // `{:?}` keeps full f64 precision for the round-trip
                line.push_str(&format!(" {i}:{v:?}"));
            }
            if line.is_empty() {
                // whitespace-only marks an example with neither labels nor features
                line.push(' ');
            }
            writeln!(w, "{line}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        self.write(BufWriter::new(File::create(path)?))
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn normalize_l2(&mut self) {
        for ex in &mut self.examples {
            ex.features.normalize_l2();
        }
    }

    /// First `n` examples after a seeded shuffle; all of them if `n >= len`.
    pub fn subsample(&self, n: usize, seed: u64) -> Dataset {
        let mut order: Vec<usize> = (0..self.len()).collect();
        if n < self.len() {
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            order.truncate(n);
            order.sort_unstable();
        }
        Dataset {
            examples: order.into_iter().map(|i| self.examples[i].clone()).collect(),
            num_features: self.num_features,
            num_labels: self.num_labels,
        }
    }

    /// One epoch of example indices in seeded random order, cut into
    /// batches of `batch_size`; the last batch may be short.
    pub fn batches(&self, batch_size: usize, seed: u64) -> Vec<Vec<usize>> {
        batch_indices(self.len(), batch_size, seed)
    }
}

pub fn batch_indices(n: usize, batch_size: usize, seed: u64) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch size must be positive");
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// `|top-k ∩ truth| / k`; a ranking shorter than `k` still divides by `k`.
pub fn precision_at_k(ranked: &[u32], truth: &[u32], k: usize) -> f64 {
    assert!(k >= 1, "k must be positive");
    if ranked.is_empty() {
        return 0.0;
    }
    let hits = ranked.iter().take(k).filter(|r| truth.contains(r)).count();
    hits as f64 / k as f64
}

/// Settings for [`synthetic`].
///
/// Labels are split into groups. Every group owns a set of shared features
/// and every label a few features of its own, so telling labels apart inside
/// a group needs the label-specific features while the shared ones make the
/// group's labels similar to each other.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub num_train: usize,
    pub num_test: usize,
    pub dim: usize,
    pub num_labels: usize,
    pub group_size: usize,
    pub group_features: usize,
    pub label_features: usize,
    /// Each example has 1..=max_labels labels, drawn independently.
    pub max_labels: usize,
    /// Label frequencies follow `1 / rank^label_zipf` over a random ranking
    /// of the labels; 0 gives uniform labels.
    pub label_zipf: f64,
    /// Uniformly random features added to every example.
    pub noise_features: usize,
    /// Probability of dropping each signature feature from an example.
    pub dropout: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_train: 5000,
            num_test: 1000,
            dim: 1000,
            num_labels: 2000,
            group_size: 8,
            group_features: 12,
            label_features: 4,
            max_labels: 2,
            label_zipf: 1.0,
            noise_features: 6,
            dropout: 0.2,
            seed: 0,
        }
    }
}

/// Generates a train and a test set from the same label signatures.
pub fn synthetic(cfg: &SyntheticConfig) -> (Dataset, Dataset) {
    assert!(cfg.dim > 0 && cfg.num_labels > 0 && cfg.group_size > 0 && cfg.max_labels > 0);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let num_groups = cfg.num_labels.div_ceil(cfg.group_size);
    let pick = |rng: &mut ChaCha8Rng, n: usize| -> Vec<u32> {
        rand::seq::index::sample(rng, cfg.dim, n.min(cfg.dim))
            .into_iter()
            .map(|i| i as u32)
            .collect()
    };
    let group_sig: Vec<Vec<u32>> = (0..num_groups).map(|_| pick(&mut rng, cfg.group_features)).collect();
    let label_sig: Vec<Vec<u32>> = (0..cfg.num_labels).map(|_| pick(&mut rng, cfg.label_features)).collect();
    let mut by_rank: Vec<u32> = (0..cfg.num_labels as u32).collect();
    by_rank.shuffle(&mut rng);
    let popularity = WeightedIndex::new((1..=cfg.num_labels).map(|r| (r as f64).powf(-cfg.label_zipf)))
        .expect("positive weights");
    let draw = |rng: &mut ChaCha8Rng| by_rank[popularity.sample(rng)];

    let make = |rng: &mut ChaCha8Rng| -> Example {
        let primary = draw(rng);
        let mut labels = vec![primary];
        let extra = rng.gen_range(0..cfg.max_labels);
        for _ in 0..extra {
            labels.push(draw(rng));
        }
        labels.sort_unstable();
        labels.dedup();
        let mut dense = vec![0f64; cfg.dim];
        for &l in &labels {
            let g = l as usize / cfg.group_size;
            for &i in group_sig[g].iter().chain(&label_sig[l as usize]) {
                if !rng.gen_bool(cfg.dropout) {
                    dense[i as usize] += rng.gen_range(0.5..1.5);
                }
            }
        }
        for _ in 0..cfg.noise_features {
            dense[rng.gen_range(0..cfg.dim)] += rng.gen_range(0.0..1.0);
        }
        Example {
            features: SparseVector::from_dense(&dense),
            labels,
        }
    };
    let train = (0..cfg.num_train).map(|_| make(&mut rng)).collect();
    let test = (0..cfg.num_test).map(|_| make(&mut rng)).collect();
    let wrap = |examples| Dataset {
        examples,
        num_features: cfg.dim,
        num_labels: cfg.num_labels,
    };
    (wrap(train), wrap(test))
}
