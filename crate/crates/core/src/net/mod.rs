//! The network: layers of neurons, hash-sampled sparse forward and backward
//! passes, and lock-free batch-parallel training.
//!
//! A forward pass visits layers in order. A layer with hash tables hashes its
//! input, reads one bucket per table and runs the configured sampler to pick
//! its active neurons; a dense layer activates everything. Only active
//! neurons are evaluated, and only their nonzero outputs feed the next
//! layer. The output layer applies softmax over its active set.
//!
//! Backpropagation is message passing: each active neuron pushes
//! `w[i] * delta` into the per-slot gradient cell of the active input neuron
//! `i`, then applies a sparse Adam step to the weights it read. Nothing
//! incident to an inactive neuron is read or written.
//!
//! [`Network::train_batch`] runs every batch instance in its own slot,
//! spread over the configured number of worker threads. Parameter writes
//! are unsynchronized; hash tables are rebuilt between batches.

mod adam;
mod checkpoint;
mod neuron;

pub use adam::{apply_update, AdamConfig, NeuronGrad};
pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use neuron::Neuron;

use std::sync::{Arc, Mutex};

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::hash::HashFamilyConfig;
use crate::sampler::{self, SamplerConfig, SamplerError, SamplerScratch};
use crate::sparse::SparseVector;
use crate::table::{LshTables, NeuronWeights, TableConfig, TableError};

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("input dimension mismatch (expected {expected}, got {got})")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("batch slot {slot} out of range for batch size {batch_size}")]
    SlotOutOfRange { slot: usize, batch_size: usize },
    #[error("trace belongs to slot {trace:?}, not slot {slot}")]
    TraceSlotMismatch { trace: Option<usize>, slot: usize },
    #[error("label {label} out of range for {width} outputs")]
    LabelOutOfRange { label: u32, width: usize },
    #[error("weight index {index} out of range for fan-in {len}")]
    IndexOutOfRange { index: u32, len: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("batch of {got} exceeds batch size {batch_size}")]
    BatchTooLarge { got: usize, batch_size: usize },
    #[error("invalid network config: {0}")]
    Config(String),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("non-finite loss at iteration {0}")]
    NonFiniteLoss(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Softmax,
}

/// Hash-table sampling settings for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LshLayerConfig {
    /// `dim` is filled in from the previous layer width when left at 0.
    pub hash: HashFamilyConfig,
    pub table: TableConfig,
    pub sampler: SamplerConfig,
}

/// How a layer picks its active neurons.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSampling {
    Dense,
    Lsh(LshLayerConfig),
    /// `count` neurons uniformly at random per instance during training,
    /// all neurons at inference. This is the static sampled-softmax baseline.
    Uniform { count: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerConfig {
    pub width: usize,
    pub sampling: LayerSampling,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub input_dim: usize,
    /// Hidden layers use ReLU, the last layer softmax.
    pub layers: Vec<LayerConfig>,
    pub batch_size: usize,
    pub seed: u64,
}

/// Optimizer and parallelism settings for [`Network::train_batch`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub epochs: usize,
    pub workers: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            adam: AdamConfig::default(),
            epochs: 1,
            workers: 1,
            seed: 0,
        }
    }
}

enum Sampling {
    Dense,
    Lsh { tables: LshTables, sampler: SamplerConfig },
    Uniform { count: usize },
}

pub struct Layer {
    neurons: Vec<Neuron>,
    activation: Activation,
    sampling: Sampling,
    fan_in: usize,
}

impl Layer {
    pub fn width(&self) -> usize {
        self.neurons.len()
    }

    pub fn fan_in(&self) -> usize {
        self.fan_in
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn neurons(&self) -> &[Neuron] {
        &self.neurons
    }

    pub fn neuron(&self, id: usize) -> &Neuron {
        &self.neurons[id]
    }

    pub fn tables(&self) -> Option<&LshTables> {
        match &self.sampling {
            Sampling::Lsh { tables, .. } => Some(tables),
            _ => None,
        }
    }

    pub fn tables_mut(&mut self) -> Option<&mut LshTables> {
        match &mut self.sampling {
            Sampling::Lsh { tables, .. } => Some(tables),
            _ => None,
        }
    }

    pub fn is_sampled(&self) -> bool {
        !matches!(self.sampling, Sampling::Dense)
    }
}

struct LayerWeights<'a>(&'a [Neuron]);

impl NeuronWeights for LayerWeights<'_> {
    fn num_neurons(&self) -> usize {
        self.0.len()
    }

    fn weights(&self, id: usize) -> Vec<f32> {
        self.0[id].weights()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessKind {
    Read,
    Write,
}

/// One recorded touch of a neuron's weight row.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightAccess {
    pub layer: usize,
    pub neuron: u32,
    pub kind: AccessKind,
    pub indices: Vec<u32>,
}

/// Records every weight-row access made by forward and backward passes
/// when attached with [`Network::set_access_log`].
#[derive(Debug, Default)]
pub struct AccessLog(Mutex<Vec<WeightAccess>>);

impl AccessLog {
    pub fn take(&self) -> Vec<WeightAccess> {
        std::mem::take(&mut self.0.lock().expect("access log poisoned"))
    }

    fn record(&self, layer: usize, neuron: u32, kind: AccessKind, indices: &[u32]) {
        self.0.lock().expect("access log poisoned").push(WeightAccess {
            layer,
            neuron,
            kind,
            indices: indices.to_vec(),
        });
    }
}

/// What one forward pass activated.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// Batch slot written during training; `None` for inference.
    pub slot: Option<usize>,
    /// Input of every layer: the data vector, then each layer's nonzero
    /// outputs.
    pub inputs: Vec<SparseVector>,
    /// Sorted active ids per layer.
    pub active: Vec<Vec<u32>>,
    /// Softmax over the output layer's active set, aligned with
    /// `active.last()`.
    pub outputs: Vec<f64>,
}

impl ForwardTrace {
    /// Cross-entropy against the uniform distribution over `labels`, using
    /// the active-set softmax.
    pub fn loss(&self, labels: &[u32]) -> f64 {
        if labels.is_empty() {
            return 0.0;
        }
        let out_ids = self.active.last().expect("network has layers");
        let w = 1.0 / labels.len() as f64;
        labels
            .iter()
            .map(|l| {
                let p = out_ids
                    .binary_search(l)
                    .map(|k| self.outputs[k])
                    .unwrap_or(0.0);
                -w * p.max(f64::MIN_POSITIVE).ln()
            })
            .sum()
    }

    /// Output ids ranked by score, highest first; ties to the smaller id.
    pub fn ranking(&self) -> Vec<(u32, f64)> {
        let ids = self.active.last().expect("network has layers");
        let mut ranked: Vec<(u32, f64)> = ids.iter().copied().zip(self.outputs.iter().copied()).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked
    }
}

/// Per-worker buffers reused across forward calls.
#[derive(Debug, Clone)]
pub struct Workspace {
    samplers: Vec<SamplerScratch>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchStats {
    /// Mean loss over instances with labels.
    pub loss: f64,
    /// Mean fraction of neurons active, per layer.
    pub active_fraction: Vec<f64>,
    /// Whether any layer rebuilt its tables after this batch.
    pub rebuilt: bool,
}

enum Mode<'a> {
    Train { slot: usize, labels: &'a [u32] },
    Infer,
}

pub struct Network {
    input_dim: usize,
    batch_size: usize,
    seed: u64,
    layers: Vec<Layer>,
    access_log: Option<Arc<AccessLog>>,
}

fn mix_seed(a: u64, b: u64, c: u64) -> u64 {
    // splitmix-style combination, stable across platforms
    let mut z = a
        .wrapping_add(b.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(c.wrapping_mul(0xd1b5_4a32_d192_ed03));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Random stream used by [`Network::train_batch`] for one batch slot.
pub fn slot_rng(seed: u64, iteration: u64, slot: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(seed, iteration, slot as u64))
}

impl Network {
    /// Builds the layers with weights uniform in `±1/sqrt(fan_in)`, zero
    /// biases, and fills every layer's hash tables.
    pub fn new(config: &NetworkConfig) -> Result<Self, NetError> {
        if config.layers.is_empty() {
            return Err(NetError::Config("at least one layer is required".into()));
        }
        if config.input_dim == 0 || config.batch_size == 0 {
            return Err(NetError::Config("input_dim and batch_size must be positive".into()));
        }
        let n_layers = config.layers.len();
        let mut layers = Vec::with_capacity(n_layers);
        let mut fan_in = config.input_dim;
        for (l, lc) in config.layers.iter().enumerate() {
            if lc.width == 0 {
                return Err(NetError::Config(format!("layer {l} has zero width")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, l as u64, 1));
            let bound = 1.0 / (fan_in as f32).sqrt();
            let mut row = vec![0f32; fan_in];
            let neurons: Vec<Neuron> = (0..lc.width)
                .map(|_| {
                    row.iter_mut().for_each(|w| *w = rng.gen_range(-bound..=bound));
                    Neuron::new(&row, 0.0, config.batch_size)
                })
                .collect();
            let sampling = match &lc.sampling {
                LayerSampling::Dense => Sampling::Dense,
                LayerSampling::Uniform { count } => {
                    if *count == 0 {
                        return Err(NetError::Config(format!("layer {l}: uniform count must be positive")));
                    }
                    Sampling::Uniform { count: *count }
                }
                LayerSampling::Lsh(lsh) => {
                    let mut hash = lsh.hash.clone();
                    if hash.dim == 0 {
                        hash.dim = fan_in;
                    } else if hash.dim != fan_in {
                        return Err(NetError::Config(format!(
                            "layer {l}: hash dim {} differs from fan-in {fan_in}",
                            hash.dim
                        )));
                    }
                    lsh.sampler.validate(hash.num_tables)?;
                    let mut tables = LshTables::new(hash, lsh.table.clone())?;
                    tables.build(&LayerWeights(&neurons))?;
                    Sampling::Lsh {
                        tables,
                        sampler: lsh.sampler.clone(),
                    }
                }
            };
            layers.push(Layer {
                neurons,
                activation: if l + 1 == n_layers {
                    Activation::Softmax
                } else {
                    Activation::Relu
                },
                sampling,
                fan_in,
            });
            fan_in = lc.width;
        }
        Ok(Self {
            input_dim: config.input_dim,
            batch_size: config.batch_size,
            seed: config.seed,
            layers,
            access_log: None,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer(&self, l: usize) -> &Layer {
        &self.layers[l]
    }

    pub fn layer_mut(&mut self, l: usize) -> &mut Layer {
        &mut self.layers[l]
    }

    pub fn num_outputs(&self) -> usize {
        self.layers.last().map(Layer::width).unwrap_or(0)
    }

    pub fn set_access_log(&mut self, log: Option<Arc<AccessLog>>) {
        self.access_log = log;
    }

    pub fn workspace(&self) -> Workspace {
        Workspace {
            samplers: self.layers.iter().map(|l| SamplerScratch::new(l.width())).collect(),
        }
    }

    /// Re-hashes every sampled layer from the current weights.
    pub fn rebuild_tables(&mut self) -> Result<(), NetError> {
        for layer in &mut self.layers {
            if let Sampling::Lsh { tables, .. } = &mut layer.sampling {
                tables.rebuild(&LayerWeights(&layer.neurons))?;
            }
        }
        Ok(())
    }

    fn check_labels(&self, labels: &[u32]) -> Result<(), NetError> {
        let width = self.num_outputs();
        match labels.iter().find(|&&l| l as usize >= width) {
            Some(&label) => Err(NetError::LabelOutOfRange { label, width }),
            None => Ok(()),
        }
    }

    /// Training forward pass for batch slot `slot`. True labels are added to
    /// the output layer's active set so their gradient is never dropped.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        input: &SparseVector,
        slot: usize,
        labels: &[u32],
        rng: &mut R,
    ) -> Result<ForwardTrace, NetError> {
        let mut ws = self.workspace();
        self.forward_in(input, slot, labels, rng, &mut ws)
    }

    pub fn forward_in<R: Rng + ?Sized>(
        &self,
        input: &SparseVector,
        slot: usize,
        labels: &[u32],
        rng: &mut R,
        ws: &mut Workspace,
    ) -> Result<ForwardTrace, NetError> {
        self.run_forward(input, Mode::Train { slot, labels }, None, rng, ws)
    }

    /// Training forward pass with caller-chosen active sets; `None` entries
    /// fall back to the layer's own sampling. Labels are still added to the
    /// output set.
    pub fn forward_with_active<R: Rng + ?Sized>(
        &self,
        input: &SparseVector,
        slot: usize,
        labels: &[u32],
        active: &[Option<Vec<u32>>],
        rng: &mut R,
    ) -> Result<ForwardTrace, NetError> {
        let mut ws = self.workspace();
        self.run_forward(input, Mode::Train { slot, labels }, Some(active), rng, &mut ws)
    }

    /// Inference pass: no slot state is written and labels are not forced
    /// into the output set. Uniformly sampled layers evaluate every neuron.
    pub fn infer<R: Rng + ?Sized>(
        &self,
        input: &SparseVector,
        rng: &mut R,
        ws: &mut Workspace,
    ) -> Result<ForwardTrace, NetError> {
        self.run_forward(input, Mode::Infer, None, rng, ws)
    }

    /// Inference pass over explicit active sets (`None` = layer default).
    pub fn infer_with_active<R: Rng + ?Sized>(
        &self,
        input: &SparseVector,
        active: &[Option<Vec<u32>>],
        rng: &mut R,
    ) -> Result<ForwardTrace, NetError> {
        let mut ws = self.workspace();
        self.run_forward(input, Mode::Infer, Some(active), rng, &mut ws)
    }

    /// Output labels ranked by score for `input`, using the layers' own
    /// sampling with a fixed random stream.
    pub fn predict(&self, input: &SparseVector) -> Result<Vec<u32>, NetError> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed, u64::MAX, 7));
        let mut ws = self.workspace();
        Ok(self
            .infer(input, &mut rng, &mut ws)?
            .ranking()
            .into_iter()
            .map(|(id, _)| id)
            .collect())
    }

    fn select_active<R: Rng + ?Sized>(
        &self,
        l: usize,
        input: &SparseVector,
        mode: &Mode<'_>,
        rng: &mut R,
        ws: &mut Workspace,
    ) -> Result<Vec<u32>, NetError> {
        let layer = &self.layers[l];
        let width = layer.width();
        let is_output = l + 1 == self.layers.len();
        let mut ids: Vec<u32> = match (&layer.sampling, mode) {
            (Sampling::Dense, _) | (Sampling::Uniform { .. }, Mode::Infer) => {
                return Ok((0..width as u32).collect())
            }
            (Sampling::Uniform { count }, Mode::Train { .. }) => sample_indices(rng, width, (*count).min(width))
                .into_iter()
                .map(|i| i as u32)
                .collect(),
            (Sampling::Lsh { tables, sampler: cfg }, _) => {
                let raw = tables.query(input)?;
                let report = sampler::sample(&raw, cfg, rng, &mut ws.samplers[l]);
                if report.active_ids.is_empty() {
                    sample_indices(rng, width, cfg.beta.min(width))
                        .into_iter()
                        .map(|i| i as u32)
                        .collect()
                } else {
                    report.active_ids
                }
            }
        };
        if let (true, Mode::Train { labels, .. }) = (is_output, mode) {
            ids.extend_from_slice(labels);
        }
        ids.sort_unstable();
        ids.dedup();
        Ok(ids)
    }

    fn run_forward<R: Rng + ?Sized>(
        &self,
        input: &SparseVector,
        mode: Mode<'_>,
        forced: Option<&[Option<Vec<u32>>]>,
        rng: &mut R,
        ws: &mut Workspace,
    ) -> Result<ForwardTrace, NetError> {
        if input.dim() != self.input_dim {
            return Err(NetError::DimensionMismatch {
                expected: self.input_dim,
                got: input.dim(),
            });
        }
        let slot = match mode {
            Mode::Train { slot, labels } => {
                if slot >= self.batch_size {
                    return Err(NetError::SlotOutOfRange {
                        slot,
                        batch_size: self.batch_size,
                    });
                }
                self.check_labels(labels)?;
                Some(slot)
            }
            Mode::Infer => None,
        };
        let n_layers = self.layers.len();
        let mut inputs = Vec::with_capacity(n_layers);
        let mut active_sets = Vec::with_capacity(n_layers);
        let mut outputs = Vec::new();
        let mut x = input.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let ids = match forced.and_then(|f| f.get(l)).and_then(Option::as_ref) {
                Some(f) => {
                    let mut f = f.clone();
                    if let (true, Mode::Train { labels, .. }) = (l + 1 == n_layers, &mode) {
                        f.extend_from_slice(labels);
                    }
                    f.sort_unstable();
                    f.dedup();
                    if let Some(&bad) = f.iter().find(|&&i| i as usize >= layer.width()) {
                        return Err(NetError::IndexOutOfRange {
                            index: bad,
                            len: layer.width(),
                        });
                    }
                    f
                }
                None => self.select_active(l, &x, &mode, rng, ws)?,
            };
            let mut z: Vec<f64> = ids
                .iter()
                .map(|&a| {
                    if let Some(log) = &self.access_log {
                        log.record(l, a, AccessKind::Read, x.indices());
                    }
                    layer.neurons[a as usize].pre_activation(x.indices(), x.values())
                })
                .collect();
            match layer.activation {
                Activation::Relu => z.iter_mut().for_each(|v| *v = v.max(0.0)),
                Activation::Softmax => softmax_in_place(&mut z),
            }
            if let Some(slot) = slot {
                for (&a, &v) in ids.iter().zip(&z) {
                    layer.neurons[a as usize].activate(slot, v);
                }
            }
            let next = if layer.activation == Activation::Softmax {
                outputs = z;
                None
            } else {
                Some(SparseVector::from_sorted(layer.width(), ids.clone(), z).expect("sorted finite activations"))
            };
            inputs.push(std::mem::replace(&mut x, next.unwrap_or_default()));
            active_sets.push(ids);
        }
        Ok(ForwardTrace {
            slot,
            inputs,
            active: active_sets,
            outputs,
        })
    }

    /// Backward pass for one slot, applying a sparse Adam step to every
    /// active neuron as soon as its error has been propagated.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        labels: &[u32],
        slot: usize,
        adam: &AdamConfig,
    ) -> Result<(), NetError> {
        let mut err = None;
        self.backward_with(trace, labels, slot, |l, a, g| {
            if err.is_none() {
                if let Err(e) = apply_update(&self.layers[l].neurons[a as usize], g, adam) {
                    err = Some(e);
                }
            }
        })?;
        err.map_or(Ok(()), Err)
    }

    /// Backward pass handing each active neuron's gradient to `sink`
    /// (layer, neuron id, gradient) instead of updating weights. Errors are
    /// propagated through each neuron's weights before `sink` sees it.
    pub fn backward_with<F>(&self, trace: &ForwardTrace, labels: &[u32], slot: usize, mut sink: F) -> Result<(), NetError>
    where
        F: FnMut(usize, u32, &NeuronGrad<'_>),
    {
        if trace.slot != Some(slot) {
            return Err(NetError::TraceSlotMismatch { trace: trace.slot, slot });
        }
        self.check_labels(labels)?;
        let last = self.layers.len() - 1;
        if labels.is_empty() {
            self.release(trace, slot);
            return Ok(());
        }
        let target = 1.0 / labels.len() as f64;
        {
            let out = &self.layers[last];
            for (&a, &p) in trace.active[last].iter().zip(&trace.outputs) {
                let y = if labels.contains(&a) { target } else { 0.0 };
                out.neurons[a as usize].set_gradient(slot, p - y);
            }
        }
        let mut values = Vec::new();
        for l in (0..=last).rev() {
            let layer = &self.layers[l];
            let x = &trace.inputs[l];
            for &a in &trace.active[l] {
                let neuron = &layer.neurons[a as usize];
                let delta = match layer.activation {
                    Activation::Softmax => neuron.gradient(slot),
                    Activation::Relu if neuron.activation(slot) > 0.0 => neuron.gradient(slot),
                    Activation::Relu => 0.0,
                };
                if let Some(log) = &self.access_log {
                    if l > 0 && delta != 0.0 {
                        log.record(l, a, AccessKind::Read, x.indices());
                    }
                    log.record(l, a, AccessKind::Write, x.indices());
                }
                if l > 0 && delta != 0.0 {
                    let prev = &self.layers[l - 1];
                    for &i in x.indices() {
                        prev.neurons[i as usize].add_gradient(slot, neuron.weight(i as usize) as f64 * delta);
                    }
                }
                values.clear();
                values.extend(x.values().iter().map(|&xi| delta * xi));
                sink(
                    l,
                    a,
                    &NeuronGrad {
                        indices: x.indices(),
                        values: &values,
                        bias: delta,
                    },
                );
            }
        }
        self.release(trace, slot);
        Ok(())
    }

    fn release(&self, trace: &ForwardTrace, slot: usize) {
        for (layer, ids) in self.layers.iter().zip(&trace.active) {
            for &a in ids {
                layer.neurons[a as usize].release(slot);
            }
        }
    }

    /// Forward and backward for every instance of `batch`, then a rebuild
    /// check for every hashed layer. `iteration` counts batches from 1.
    pub fn train_batch(
        &mut self,
        batch: &[(&SparseVector, &[u32])],
        iteration: u64,
        cfg: &TrainConfig,
    ) -> Result<BatchStats, NetError> {
        if batch.is_empty() {
            return Err(NetError::EmptyBatch);
        }
        if batch.len() > self.batch_size {
            return Err(NetError::BatchTooLarge {
                got: batch.len(),
                batch_size: self.batch_size,
            });
        }
        let workers = cfg.workers.clamp(1, batch.len());
        let this = &*self;
        let run_slot = |slot: usize, ws: &mut Workspace| -> Result<(f64, Vec<usize>, bool), NetError> {
            let (x, labels) = batch[slot];
            let mut rng = slot_rng(cfg.seed, iteration, slot);
            let trace = this.forward_in(x, slot, labels, &mut rng, ws)?;
            let loss = trace.loss(labels);
            this.backward(&trace, labels, slot, &cfg.adam)?;
            Ok((loss, trace.active.iter().map(Vec::len).collect(), !labels.is_empty()))
        };
        let results: Vec<Result<(f64, Vec<usize>, bool), NetError>> = if workers == 1 {
            let mut ws = this.workspace();
            (0..batch.len()).map(|s| run_slot(s, &mut ws)).collect()
        } else {
            let mut out: Vec<Option<Result<_, _>>> = (0..batch.len()).map(|_| None).collect();
            std::thread::scope(|scope| {
                let handles: Vec<_> = (0..workers)
                    .map(|w| {
                        let run_slot = &run_slot;
                        scope.spawn(move || {
                            let mut ws = this.workspace();
                            (w..batch.len())
                                .step_by(workers)
                                .map(|s| (s, run_slot(s, &mut ws)))
                                .collect::<Vec<_>>()
                        })
                    })
                    .collect();
                for h in handles {
                    for (s, r) in h.join().expect("worker panicked") {
                        out[s] = Some(r);
                    }
                }
            });
            out.into_iter().map(|r| r.expect("every slot ran")).collect()
        };

        let mut loss_sum = 0.0;
        let mut labelled = 0usize;
        let mut active_sum = vec![0usize; self.layers.len()];
        for r in results {
            let (loss, counts, has_labels) = r?;
            if has_labels {
                loss_sum += loss;
                labelled += 1;
            }
            for (s, c) in active_sum.iter_mut().zip(counts) {
                *s += c;
            }
        }
        let loss = if labelled > 0 { loss_sum / labelled as f64 } else { 0.0 };
        if !loss.is_finite() {
            return Err(NetError::NonFiniteLoss(iteration));
        }
        let active_fraction = active_sum
            .iter()
            .zip(&self.layers)
            .map(|(&s, l)| s as f64 / (batch.len() * l.width()) as f64)
            .collect();

        let mut rebuilt = false;
        for layer in &mut self.layers {
            if let Sampling::Lsh { tables, .. } = &mut layer.sampling {
                rebuilt |= tables.maybe_rebuild(iteration, &LayerWeights(&layer.neurons))?;
            }
        }
        Ok(BatchStats {
            loss,
            active_fraction,
            rebuilt,
        })
    }
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

#[cfg(test)]
mod tests;
