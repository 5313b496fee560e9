//! Run configuration, read from TOML.
//!
//! Every section and field is optional; missing values take the defaults
//! below. Unknown keys are rejected so typos do not silently fall back to a
//! default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use slide_core::data::SyntheticConfig;
use slide_core::hash::{HashFamilyConfig, HashKind};
use slide_core::net::{AdamConfig, LayerConfig, LayerSampling, LshLayerConfig, NetworkConfig, TrainConfig};
use slide_core::sampler::{SamplerConfig, SamplingStrategy};
use slide_core::table::{InsertPolicy, TableConfig};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: usize,
    pub out_dir: PathBuf,
    pub data: DataSection,
    pub model: ModelSection,
    pub hash: HashSection,
    pub sampler: SamplerSection,
    pub table: TableSection,
    pub train: TrainSection,
    pub bench: BenchSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 1,
            out_dir: PathBuf::from("out"),
            data: DataSection::default(),
            model: ModelSection::default(),
            hash: HashSection::default(),
            sampler: SamplerSection::default(),
            table: TableSection::default(),
            train: TrainSection::default(),
            bench: BenchSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalize {
    None,
    L2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Extreme-classification text files. When `train` is absent a
    /// synthetic dataset is generated instead.
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub normalize: Normalize,
    /// Test examples scored at each evaluation.
    pub eval_subsample: usize,
    pub synthetic: SyntheticSection,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            train: None,
            test: None,
            normalize: Normalize::None,
            eval_subsample: 10_000,
            synthetic: SyntheticSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSection {
    pub num_train: usize,
    pub num_test: usize,
    pub dim: usize,
    pub num_labels: usize,
    pub group_size: usize,
    pub group_features: usize,
    pub label_features: usize,
    pub max_labels: usize,
    pub label_zipf: f64,
    pub noise_features: usize,
    pub dropout: f64,
    /// Defaults to the run seed.
    pub seed: Option<u64>,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        let d = SyntheticConfig::default();
        Self {
            num_train: d.num_train,
            num_test: d.num_test,
            dim: d.dim,
            num_labels: d.num_labels,
            group_size: d.group_size,
            group_features: d.group_features,
            label_features: d.label_features,
            max_labels: d.max_labels,
            label_zipf: d.label_zipf,
            noise_features: d.noise_features,
            dropout: d.dropout,
            seed: None,
        }
    }
}

impl SyntheticSection {
    pub fn to_core(&self, run_seed: u64) -> SyntheticConfig {
        SyntheticConfig {
            num_train: self.num_train,
            num_test: self.num_test,
            dim: self.dim,
            num_labels: self.num_labels,
            group_size: self.group_size,
            group_features: self.group_features,
            label_features: self.label_features,
            max_labels: self.max_labels,
            label_zipf: self.label_zipf,
            noise_features: self.noise_features,
            dropout: self.dropout,
            seed: self.seed.unwrap_or(run_seed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputMode {
    /// Hash-table sampling of the output layer.
    Lsh,
    /// Full softmax.
    Dense,
    /// Fixed-size uniform sample per instance.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub hidden: Vec<usize>,
    /// Also sample hidden layers through hash tables.
    pub hidden_lsh: bool,
    pub output: OutputMode,
    /// Active output count for [`OutputMode::Uniform`].
    pub uniform_count: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            hidden: vec![128],
            hidden_lsh: false,
            output: OutputMode::Lsh,
            uniform_count: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HashSection {
    /// simhash, wta, dwta or doph
    pub family: String,
    pub k: usize,
    pub l: usize,
    pub simhash_sparsity: f64,
    pub wta_bin_size: usize,
    pub doph_top_k: usize,
}

impl Default for HashSection {
    fn default() -> Self {
        Self {
            family: "simhash".into(),
            k: 9,
            l: 50,
            simhash_sparsity: 1.0 / 3.0,
            wta_bin_size: 8,
            doph_top_k: 32,
        }
    }
}

impl HashSection {
    pub fn kind(&self) -> Result<HashKind, CliError> {
        match self.family.to_ascii_lowercase().as_str() {
            "simhash" => Ok(HashKind::SimHash),
            "wta" => Ok(HashKind::Wta),
            "dwta" => Ok(HashKind::Dwta),
            "doph" => Ok(HashKind::Doph),
            other => Err(CliError::Config(format!("unknown hash family {other:?}"))),
        }
    }

    /// Family config with `dim` left for the network to fill in.
    pub fn to_core(&self, seed: u64) -> Result<HashFamilyConfig, CliError> {
        Ok(HashFamilyConfig {
            family: self.kind()?,
            k_per_table: self.k,
            num_tables: self.l,
            dim: 0,
            simhash_sparsity: self.simhash_sparsity,
            wta_bin_size: self.wta_bin_size,
            doph_top_k: self.doph_top_k,
            seed,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    /// vanilla, topk or threshold
    pub strategy: String,
    pub beta: usize,
    pub min_freq: usize,
}

impl Default for SamplerSection {
    fn default() -> Self {
        Self {
            strategy: "vanilla".into(),
            beta: 1000,
            min_freq: 1,
        }
    }
}

impl SamplerSection {
    pub fn to_core(&self) -> Result<SamplerConfig, CliError> {
        let strategy = match self.strategy.to_ascii_lowercase().as_str() {
            "vanilla" => SamplingStrategy::Vanilla,
            "topk" => SamplingStrategy::TopK,
            "threshold" | "hard_threshold" => SamplingStrategy::HardThreshold,
            other => return Err(CliError::Config(format!("unknown sampler {other:?}"))),
        };
        Ok(SamplerConfig {
            strategy,
            beta: self.beta,
            min_freq: self.min_freq,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TableSection {
    pub bucket_capacity: usize,
    /// fifo or reservoir
    pub policy: String,
    pub n0: u64,
    pub lambda: f64,
}

impl Default for TableSection {
    fn default() -> Self {
        let d = TableConfig::default();
        Self {
            bucket_capacity: d.bucket_capacity,
            policy: "fifo".into(),
            n0: d.n0,
            lambda: d.lambda,
        }
    }
}

impl TableSection {
    pub fn policy(&self) -> Result<InsertPolicy, CliError> {
        match self.policy.to_ascii_lowercase().as_str() {
            "fifo" => Ok(InsertPolicy::Fifo),
            "reservoir" => Ok(InsertPolicy::Reservoir),
            other => Err(CliError::Config(format!("unknown insert policy {other:?}"))),
        }
    }

    pub fn to_core(&self, seed: u64) -> Result<TableConfig, CliError> {
        Ok(TableConfig {
            bucket_capacity: self.bucket_capacity,
            policy: self.policy()?,
            n0: self.n0,
            lambda: self.lambda,
            seed,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many batches even if epochs remain.
    pub max_iterations: Option<u64>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Evaluate every this many iterations (and always at the end).
    pub eval_every: u64,
    pub checkpoint: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let a = AdamConfig::default();
        Self {
            batch_size: 128,
            epochs: 1,
            max_iterations: None,
            learning_rate: 1e-4,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            eval_every: 50,
            checkpoint: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    /// Candidate counts timed by `bench-samplers`.
    pub sample_sizes: Vec<usize>,
    /// Buckets per candidate stream.
    pub sample_tables: usize,
    /// Vanilla target as a fraction of the candidate count.
    pub vanilla_beta_fraction: f64,
    /// Hard-threshold minimum count.
    pub threshold_min_freq: usize,
    pub repeats: usize,
    /// Neurons and their dimension for `bench-insertion`.
    pub neurons: usize,
    pub dim: usize,
    /// Put every neuron in the same bucket of every table.
    pub forced_collisions: bool,
    /// Worker counts and iterations for `bench-scaling`.
    pub worker_counts: Vec<usize>,
    pub scaling_iterations: u64,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            sample_sizes: vec![1_000, 10_000, 100_000],
            sample_tables: 50,
            vanilla_beta_fraction: 0.1,
            threshold_min_freq: 2,
            repeats: 20,
            neurons: 256,
            dim: 100_000,
            forced_collisions: false,
            worker_counts: vec![1, 2, 4, 8],
            scaling_iterations: 200,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Hex SHA-256 of the resolved configuration.
    pub fn hash(&self) -> String {
        let text = toml::to_string(self).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.into()));
        if self.workers == 0 {
            return bad("workers must be at least 1");
        }
        if self.train.batch_size == 0 {
            return bad("train.batch_size must be at least 1");
        }
        if self.train.eval_every == 0 {
            return bad("train.eval_every must be at least 1");
        }
        // TOML integers are signed 64-bit
        if self.train.eval_every > i64::MAX as u64 || self.train.max_iterations.is_some_and(|m| m > i64::MAX as u64) {
            return bad("train.eval_every and train.max_iterations must fit in a signed 64-bit integer");
        }
        if self.data.eval_subsample == 0 {
            return bad("data.eval_subsample must be at least 1");
        }
        for p in [&self.data.train, &self.data.test].into_iter().flatten() {
            if !p.exists() {
                return Err(CliError::Io(format!("{}: no such file", p.display())));
            }
        }
        if self.data.train.is_some() != self.data.test.is_some() {
            return bad("data.train and data.test must be given together");
        }
        self.hash.kind()?;
        self.sampler.to_core()?;
        self.table.policy()?;
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.train.learning_rate,
            beta1: self.train.beta1,
            beta2: self.train.beta2,
            eps: self.train.eps,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.train.batch_size,
            adam: self.adam(),
            epochs: self.train.epochs,
            workers: self.workers,
            seed: self.seed,
        }
    }

    fn lsh_layer(&self, layer: usize) -> Result<LayerSampling, CliError> {
        // distinct hash and table streams per layer
        let seed = self.seed.wrapping_add(1000 * (layer as u64 + 1));
        Ok(LayerSampling::Lsh(LshLayerConfig {
            hash: self.hash.to_core(seed)?,
            table: self.table.to_core(seed)?,
            sampler: self.sampler.to_core()?,
        }))
    }

    pub fn network_config(&self, input_dim: usize, num_labels: usize) -> Result<NetworkConfig, CliError> {
        let mut layers = Vec::new();
        for (l, &width) in self.model.hidden.iter().enumerate() {
            let sampling = if self.model.hidden_lsh {
                self.lsh_layer(l)?
            } else {
                LayerSampling::Dense
            };
            layers.push(LayerConfig { width, sampling });
        }
        let out = self.model.hidden.len();
        let sampling = match self.model.output {
            OutputMode::Lsh => self.lsh_layer(out)?,
            OutputMode::Dense => LayerSampling::Dense,
            OutputMode::Uniform => LayerSampling::Uniform {
                count: self.model.uniform_count,
            },
        };
        layers.push(LayerConfig {
            width: num_labels,
            sampling,
        });
        Ok(NetworkConfig {
            input_dim,
            layers,
            batch_size: self.train.batch_size,
            seed: self.seed,
        })
    }
}
