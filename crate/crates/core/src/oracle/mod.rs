//! Slow reference implementations used by tests and acceptance runs.
//!
//! Everything here is single-threaded, dense, and guarded against use above
//! toy sizes. None of it touches the state of the network it is built from.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::hash::{HashError, HashFamily, HashFamilyConfig};
use crate::net::{Activation, AdamConfig, Network};
use crate::sampler::{self, ProbeParam, SamplerConfig, SamplerScratch, SamplingStrategy};
use crate::sparse::SparseVector;
use crate::table::RawCandidates;

/// Largest number of weights a dense oracle network may hold.
pub const MAX_ORACLE_WEIGHTS: usize = 10_000;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("oracle network has {0} weights, limit is {MAX_ORACLE_WEIGHTS}")]
    TooLarge(usize),
    #[error("k = {k} exceeds {n} neurons")]
    KTooLarge { k: usize, n: usize },
    #[error("input dimension mismatch (expected {expected}, got {got})")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("need at least {min} trials, got {got}")]
    TooFewTrials { min: usize, got: usize },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error(transparent)]
    Hash(#[from] HashError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// One row per neuron.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
    pub activation: Activation,
}

/// A fully connected network in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    pub input_dim: usize,
    pub layers: Vec<DenseLayer>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGradients {
    /// Per layer, per neuron, per input.
    pub weights: Vec<Vec<Vec<f64>>>,
    pub biases: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseResult {
    /// Full softmax over every output neuron.
    pub outputs: Vec<f64>,
    pub loss: f64,
    pub grads: DenseGradients,
}

/// Which parameter a finite difference perturbs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Param {
    Weight { layer: usize, neuron: usize, input: usize },
    Bias { layer: usize, neuron: usize },
}

fn cross_entropy(probs_of: impl Fn(u32) -> f64, labels: &[u32]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let w = 1.0 / labels.len() as f64;
    labels.iter().map(|&l| -w * probs_of(l).max(f64::MIN_POSITIVE).ln()).sum()
}

fn softmax(z: &mut [f64]) {
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

impl DenseNet {
    pub fn new(input_dim: usize, layers: Vec<DenseLayer>) -> Result<Self, OracleError> {
        let total: usize = layers.iter().map(|l| l.weights.iter().map(Vec::len).sum::<usize>()).sum();
        if total > MAX_ORACLE_WEIGHTS {
            return Err(OracleError::TooLarge(total));
        }
        Ok(Self { input_dim, layers })
    }

    /// Copies the current parameters of `net`.
    pub fn from_network(net: &Network) -> Result<Self, OracleError> {
        let total: usize = net.layers().iter().map(|l| l.width() * l.fan_in()).sum();
        if total > MAX_ORACLE_WEIGHTS {
            return Err(OracleError::TooLarge(total));
        }
        let layers = net
            .layers()
            .iter()
            .map(|l| DenseLayer {
                weights: l
                    .neurons()
                    .iter()
                    .map(|n| n.weights().into_iter().map(f64::from).collect())
                    .collect(),
                biases: l.neurons().iter().map(|n| n.bias() as f64).collect(),
                activation: l.activation(),
            })
            .collect();
        Self::new(net.input_dim(), layers)
    }

    fn check_input(&self, input: &SparseVector) -> Result<(), OracleError> {
        if input.dim() != self.input_dim {
            return Err(OracleError::DimensionMismatch {
                expected: self.input_dim,
                got: input.dim(),
            });
        }
        Ok(())
    }

    /// Full forward pass followed by plain dense backprop of the
    /// cross-entropy against the uniform distribution over `labels`.
    pub fn forward_backward(&self, input: &SparseVector, labels: &[u32]) -> Result<DenseResult, OracleError> {
        self.check_input(input)?;
        let mut acts: Vec<Vec<f64>> = vec![input.to_dense()];
        for layer in &self.layers {
            let x = acts.last().expect("input present");
            let mut z: Vec<f64> = layer
                .weights
                .iter()
                .zip(&layer.biases)
                .map(|(row, b)| b + row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>())
                .collect();
            match layer.activation {
                Activation::Relu => z.iter_mut().for_each(|v| *v = v.max(0.0)),
                Activation::Softmax => softmax(&mut z),
            }
            acts.push(z);
        }
        let outputs = acts.last().expect("layers present").clone();
        let loss = cross_entropy(|l| outputs[l as usize], labels);

        let n = self.layers.len();
        let mut gw = vec![Vec::new(); n];
        let mut gb = vec![Vec::new(); n];
        let mut delta: Vec<f64> = if labels.is_empty() {
            vec![0.0; outputs.len()]
        } else {
            let t = 1.0 / labels.len() as f64;
            outputs
                .iter()
                .enumerate()
                .map(|(j, p)| p - if labels.contains(&(j as u32)) { t } else { 0.0 })
                .collect()
        };
        for l in (0..n).rev() {
            let x = &acts[l];
            gw[l] = delta.iter().map(|d| x.iter().map(|xi| d * xi).collect()).collect();
            gb[l] = delta.clone();
            if l > 0 {
                let w = &self.layers[l].weights;
                delta = (0..x.len())
                    .map(|i| {
                        if x[i] > 0.0 {
                            (0..delta.len()).map(|j| w[j][i] * delta[j]).sum()
                        } else {
                            0.0
                        }
                    })
                    .collect();
            }
        }
        Ok(DenseResult {
            outputs,
            loss,
            grads: DenseGradients { weights: gw, biases: gb },
        })
    }

    /// Loss of the subnetwork made of `active[l]` in every layer, with the
    /// softmax taken over the active output neurons only. Inactive neurons
    /// output zero.
    pub fn active_loss(&self, input: &SparseVector, labels: &[u32], active: &[Vec<u32>]) -> Result<f64, OracleError> {
        self.check_input(input)?;
        if active.len() != self.layers.len() {
            return Err(OracleError::Invalid("one active set per layer required".into()));
        }
        let mut x = input.to_dense();
        let mut out = Vec::new();
        for (layer, ids) in self.layers.iter().zip(active) {
            let mut z: Vec<f64> = ids
                .iter()
                .map(|&a| {
                    let row = &layer.weights[a as usize];
                    layer.biases[a as usize] + row.iter().zip(&x).map(|(w, xi)| w * xi).sum::<f64>()
                })
                .collect();
            match layer.activation {
                Activation::Relu => z.iter_mut().for_each(|v| *v = v.max(0.0)),
                Activation::Softmax => softmax(&mut z),
            }
            let mut next = vec![0.0; layer.weights.len()];
            for (&a, &v) in ids.iter().zip(&z) {
                next[a as usize] = v;
            }
            x = next;
            out = z;
        }
        let last = active.last().expect("layers present");
        Ok(cross_entropy(
            |l| last.binary_search(&l).map(|k| out[k]).unwrap_or(0.0),
            labels,
        ))
    }

    fn param_mut(&mut self, p: Param) -> &mut f64 {
        match p {
            Param::Weight { layer, neuron, input } => &mut self.layers[layer].weights[neuron][input],
            Param::Bias { layer, neuron } => &mut self.layers[layer].biases[neuron],
        }
    }

    /// Five-point central difference of [`DenseNet::active_loss`] with
    /// respect to one parameter.
    pub fn finite_difference(
        &self,
        input: &SparseVector,
        labels: &[u32],
        active: &[Vec<u32>],
        param: Param,
        h: f64,
    ) -> Result<f64, OracleError> {
        let mut probe = self.clone();
        let base = *probe.param_mut(param);
        let mut at = |offset: f64| {
            *probe.param_mut(param) = base + offset;
            probe.active_loss(input, labels, active)
        };
        let (p2, p1, m1, m2) = (at(2.0 * h)?, at(h)?, at(-h)?, at(-2.0 * h)?);
        Ok((-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * h))
    }
}

/// Dense trainer that applies, per instance and in order, the same sparse
/// Adam convention as the network: every neuron steps its bias and the
/// weights on nonzero inputs. Parameters and moments are kept in `f32`.
#[derive(Debug, Clone)]
pub struct DenseTrainer {
    input_dim: usize,
    activations: Vec<Activation>,
    /// `[layer][neuron]` rows of weights followed by the bias.
    params: Vec<Vec<Vec<f32>>>,
    m: Vec<Vec<Vec<f32>>>,
    v: Vec<Vec<Vec<f32>>>,
    steps: Vec<Vec<u32>>,
    adam: AdamConfig,
}

impl DenseTrainer {
    /// Starts from the current parameters of `net`.
    pub fn from_network(net: &Network, adam: AdamConfig) -> Result<Self, OracleError> {
        let total: usize = net.layers().iter().map(|l| l.width() * l.fan_in()).sum();
        if total > MAX_ORACLE_WEIGHTS {
            return Err(OracleError::TooLarge(total));
        }
        let params: Vec<Vec<Vec<f32>>> = net
            .layers()
            .iter()
            .map(|l| {
                l.neurons()
                    .iter()
                    .map(|n| {
                        let mut row = n.weights();
                        row.push(n.bias());
                        row
                    })
                    .collect()
            })
            .collect();
        let zeros: Vec<Vec<Vec<f32>>> = params
            .iter()
            .map(|l| l.iter().map(|r| vec![0.0; r.len()]).collect())
            .collect();
        Ok(Self {
            input_dim: net.input_dim(),
            activations: net.layers().iter().map(|l| l.activation()).collect(),
            steps: params.iter().map(|l| vec![0; l.len()]).collect(),
            m: zeros.clone(),
            v: zeros,
            params,
            adam,
        })
    }

    /// Weights of one neuron followed by its bias.
    pub fn row(&self, layer: usize, neuron: usize) -> &[f32] {
        &self.params[layer][neuron]
    }

    /// One instance: forward, backward, update. Returns the loss before
    /// the update; nothing changes when `labels` is empty.
    pub fn step(&mut self, input: &SparseVector, labels: &[u32]) -> Result<f64, OracleError> {
        if input.dim() != self.input_dim {
            return Err(OracleError::DimensionMismatch {
                expected: self.input_dim,
                got: input.dim(),
            });
        }
        // layer inputs as (index, value) lists of nonzeros, the form the
        // sparse network sees
        let mut xs: Vec<Vec<(usize, f64)>> = vec![input.iter().map(|(i, v)| (i as usize, v)).collect()];
        let mut out = Vec::new();
        for (l, rows) in self.params.iter().enumerate() {
            let x = &xs[l];
            let mut z: Vec<f64> = rows
                .iter()
                .map(|r| {
                    let fan_in = r.len() - 1;
                    let mut s = r[fan_in] as f64;
                    for &(i, xi) in x {
                        s += r[i] as f64 * xi;
                    }
                    s
                })
                .collect();
            match self.activations[l] {
                Activation::Relu => {
                    z.iter_mut().for_each(|v| *v = v.max(0.0));
                    xs.push(z.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, v)| (i, *v)).collect());
                }
                Activation::Softmax => {
                    softmax(&mut z);
                    out = z;
                }
            }
        }
        let loss = cross_entropy(|l| out[l as usize], labels);
        if labels.is_empty() {
            return Ok(loss);
        }
        let t = 1.0 / labels.len() as f64;
        let mut delta: Vec<f64> = out
            .iter()
            .enumerate()
            .map(|(j, p)| p - if labels.contains(&(j as u32)) { t } else { 0.0 })
            .collect();
        for l in (0..self.params.len()).rev() {
            let x = &xs[l];
            let mut prev = vec![0.0; if l > 0 { self.params[l - 1].len() } else { 0 }];
            if l > 0 {
                let act_prev: Vec<bool> = {
                    let mut a = vec![false; prev.len()];
                    x.iter().for_each(|&(i, _)| a[i] = true);
                    a
                };
                for (j, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    for &(i, _) in x {
                        prev[i] += self.params[l][j][i] as f64 * d;
                    }
                }
                for (i, p) in prev.iter_mut().enumerate() {
                    if !act_prev[i] {
                        *p = 0.0;
                    }
                }
            }
            for (j, &d) in delta.iter().enumerate() {
                self.adam_row(l, j, x, d);
            }
            delta = prev;
        }
        Ok(loss)
    }

    fn adam_row(&mut self, l: usize, j: usize, x: &[(usize, f64)], d: f64) {
        let cfg = self.adam;
        self.steps[l][j] += 1;
        let t = self.steps[l][j] as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let row = &mut self.params[l][j];
        let m = &mut self.m[l][j];
        let v = &mut self.v[l][j];
        let bias = row.len() - 1;
        let coords = x.iter().map(|&(i, xi)| (i, d * xi)).chain(std::iter::once((bias, d)));
        for (i, g) in coords {
            let mi = cfg.beta1 * m[i] as f64 + (1.0 - cfg.beta1) * g;
            let vi = cfg.beta2 * v[i] as f64 + (1.0 - cfg.beta2) * g * g;
            m[i] = mi as f32;
            v[i] = vi as f32;
            row[i] = (row[i] as f64 - cfg.learning_rate * (mi / c1) / ((vi / c2).sqrt() + cfg.eps)) as f32;
        }
    }

    /// Sequential pass over a batch; mean loss over labelled instances.
    pub fn train_batch(&mut self, batch: &[(&SparseVector, &[u32])]) -> Result<f64, OracleError> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for (x, y) in batch {
            let loss = self.step(x, y)?;
            if !y.is_empty() {
                sum += loss;
                n += 1;
            }
        }
        Ok(if n > 0 { sum / n as f64 } else { 0.0 })
    }
}

/// Ids of the `k` rows with the largest inner product with `query`,
/// ties broken toward the smaller id.
pub fn exact_mips(query: &SparseVector, neurons: &[Vec<f32>], k: usize) -> Result<Vec<u32>, OracleError> {
    if k > neurons.len() {
        return Err(OracleError::KTooLarge { k, n: neurons.len() });
    }
    let mut scored: Vec<(u32, f64)> = neurons
        .iter()
        .enumerate()
        .map(|(id, w)| {
            if w.len() != query.dim() {
                return Err(OracleError::DimensionMismatch {
                    expected: query.dim(),
                    got: w.len(),
                });
            }
            Ok((id as u32, query.iter().map(|(i, v)| v * w[i as usize] as f64).sum()))
        })
        .collect::<Result<_, _>>()?;
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(scored.into_iter().take(k).map(|(id, _)| id).collect())
}

/// Fraction of freshly seeded single hash functions (one table of one
/// code) on which `a` and `b` collide.
pub fn mc_collision(
    config: &HashFamilyConfig,
    a: &SparseVector,
    b: &SparseVector,
    trials: usize,
    seed: u64,
) -> Result<f64, OracleError> {
    if trials < 1000 {
        return Err(OracleError::TooFewTrials { min: 1000, got: trials });
    }
    let mut seeder = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..trials {
        let cfg = HashFamilyConfig {
            k_per_table: 1,
            num_tables: 1,
            seed: seeder.gen(),
            ..config.clone()
        };
        let family = HashFamily::new(cfg)?;
        if family.raw_codes(a)? == family.raw_codes(b)? {
            hits += 1;
        }
    }
    Ok(hits as f64 / trials as f64)
}

/// Monte Carlo twin of [`sampler::retrieval_probability`]. Each table's
/// bucket holds the tracked neuron when all `k` of its independent codes
/// collide, each with probability `p`.
///
/// Vanilla counts trials where the neuron collides in exactly the first
/// `tau` tables. HardThreshold builds the buckets and runs the real
/// sampler, counting trials where the neuron is selected.
pub fn simulate_retrieval(
    strategy: SamplingStrategy,
    p: f64,
    k: usize,
    l: usize,
    param: ProbeParam,
    trials: usize,
    seed: u64,
) -> Result<f64, OracleError> {
    if !(0.0..=1.0).contains(&p) || k == 0 || l == 0 {
        return Err(OracleError::Invalid(format!("p={p}, K={k}, L={l}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut table_hits = vec![false; l];
    let mut draw = |rng: &mut ChaCha8Rng| -> Vec<bool> {
        for hit in table_hits.iter_mut() {
            *hit = (0..k).all(|_| rng.gen_bool(p));
        }
        table_hits.clone()
    };
    let mut count = 0usize;
    match (strategy, param) {
        (SamplingStrategy::Vanilla, ProbeParam::TablesProbed(tau)) if tau <= l => {
            for _ in 0..trials {
                let hits = draw(&mut rng);
                if hits[..tau].iter().all(|&h| h) && hits[tau..].iter().all(|&h| !h) {
                    count += 1;
                }
            }
        }
        (SamplingStrategy::HardThreshold, ProbeParam::MinFreq(m)) if m >= 1 && m <= l => {
            let cfg = SamplerConfig::hard_threshold(m);
            let mut scratch = SamplerScratch::new(2);
            // neuron 1 fills every bucket so that none is empty
            let with = [0u32, 1];
            let without = [1u32];
            for _ in 0..trials {
                let hits = draw(&mut rng);
                let buckets: Vec<&[u32]> = hits.iter().map(|&h| if h { &with[..] } else { &without[..] }).collect();
                let report = sampler::hard_threshold_sample(&RawCandidates::new(buckets), &cfg, &mut scratch);
                if report.active_ids.contains(&0) {
                    count += 1;
                }
            }
        }
        (s, p) => return Err(OracleError::Invalid(format!("{p:?} does not apply to {s:?}"))),
    }
    Ok(count as f64 / trials as f64)
}

/// Unit vector in `dim >= 2` dimensions at angle `theta` from the first
/// basis direction of a random orthonormal pair; returns both vectors.
pub fn vectors_at_angle(dim: usize, theta: f64, seed: u64) -> (SparseVector, SparseVector) {
    assert!(dim >= 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..dim)
            .map(|_| {
                // Box-Muller
                let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                let u2: f64 = rng.gen();
                (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
            })
            .collect()
    };
    let unit = |v: Vec<f64>| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect::<Vec<f64>>()
    };
    let e1 = unit(gauss(&mut rng));
    let r = gauss(&mut rng);
    let proj: f64 = r.iter().zip(&e1).map(|(a, b)| a * b).sum();
    let e2 = unit(r.iter().zip(&e1).map(|(a, b)| a - proj * b).collect());
    let b: Vec<f64> = e1
        .iter()
        .zip(&e2)
        .map(|(x, y)| theta.cos() * x + theta.sin() * y)
        .collect();
    (SparseVector::from_dense(&e1), SparseVector::from_dense(&b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{LayerConfig, LayerSampling, NetworkConfig};

    fn small_net(seed: u64) -> Network {
        Network::new(&NetworkConfig {
            input_dim: 6,
            layers: vec![
                LayerConfig {
                    width: 5,
                    sampling: LayerSampling::Dense,
                },
                LayerConfig {
                    width: 4,
                    sampling: LayerSampling::Dense,
                },
            ],
            batch_size: 1,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn dense_outputs_sum_to_one_and_grads_match_fd() {
        let net = DenseNet::from_network(&small_net(1)).unwrap();
        let x = SparseVector::from_dense(&[0.5, 0.0, -1.0, 2.0, 0.0, 0.3]);
        let r = net.forward_backward(&x, &[2]).unwrap();
        assert!((r.outputs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let all: Vec<Vec<u32>> = net.layers.iter().map(|l| (0..l.weights.len() as u32).collect()).collect();
        for (l, layer) in net.layers.iter().enumerate() {
            for j in 0..layer.weights.len() {
                let fd = net
                    .finite_difference(&x, &[2], &all, Param::Bias { layer: l, neuron: j }, 1e-4)
                    .unwrap();
                let g = r.grads.biases[l][j];
                assert!((fd - g).abs() <= 1e-5 * g.abs().max(1e-3), "{l} {j}: {fd} vs {g}");
                let fd = net
                    .finite_difference(&x, &[2], &all, Param::Weight { layer: l, neuron: j, input: 0 }, 1e-4)
                    .unwrap();
                let g = r.grads.weights[l][j][0];
                assert!((fd - g).abs() <= 1e-5 * g.abs().max(1e-3));
            }
        }
    }

    #[test]
    fn size_guard() {
        let layer = DenseLayer {
            weights: vec![vec![0.0; 101]; 100],
            biases: vec![0.0; 100],
            activation: Activation::Softmax,
        };
        assert_eq!(DenseNet::new(101, vec![layer]), Err(OracleError::TooLarge(10_100)));
    }

    #[test]
    fn mips_examples() {
        let rows = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.6, 0.8], vec![0.0, 1.0]];
        let q = SparseVector::from_dense(&[0.0, 1.0]);
        assert_eq!(exact_mips(&q, &rows, 4).unwrap(), vec![1, 3, 2, 0]);
        assert_eq!(exact_mips(&q, &rows, 1).unwrap(), vec![1]);
        assert_eq!(exact_mips(&q, &rows, 5), Err(OracleError::KTooLarge { k: 5, n: 4 }));
    }

    #[test]
    fn collision_of_identical_vectors_is_certain() {
        let (a, _) = vectors_at_angle(200, 0.0, 1);
        let cfg = HashFamilyConfig::simhash(1, 1, 200, 0);
        assert_eq!(mc_collision(&cfg, &a, &a, 1000, 3).unwrap(), 1.0);
        assert!(mc_collision(&cfg, &a, &a, 10, 3).is_err());
    }

    #[test]
    fn angle_construction() {
        let (a, b) = vectors_at_angle(50, 1.0, 4);
        let dot: f64 = a.iter().map(|(i, v)| v * b.get(i)).sum();
        assert!((dot - 1.0f64.cos()).abs() < 1e-12);
        assert!((b.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dense_trainer_without_labels_is_inert() {
        let net = small_net(2);
        let mut t = DenseTrainer::from_network(&net, AdamConfig::default()).unwrap();
        let before = t.row(1, 0).to_vec();
        t.step(&SparseVector::from_dense(&[1.0; 6]), &[]).unwrap();
        assert_eq!(t.row(1, 0), &before[..]);
    }
}
