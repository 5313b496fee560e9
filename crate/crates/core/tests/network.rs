use std::collections::HashSet;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use slide_core::data::{precision_at_k, synthetic, SyntheticConfig};
use slide_core::hash::HashFamilyConfig;
use slide_core::net::{
    AccessKind, AccessLog, AdamConfig, LayerConfig, LayerSampling, LshLayerConfig, Network, NetworkConfig,
    TrainConfig,
};
use slide_core::oracle::{DenseNet, DenseTrainer, Param};
use slide_core::sampler::SamplerConfig;
use slide_core::table::TableConfig;
use slide_core::SparseVector;

fn dense_layers(widths: &[usize]) -> Vec<LayerConfig> {
    widths
        .iter()
        .map(|&width| LayerConfig {
            width,
            sampling: LayerSampling::Dense,
        })
        .collect()
}

fn random_input(rng: &mut ChaCha8Rng, dim: usize, nnz: usize) -> SparseVector {
    let mut dense = vec![0.0; dim];
    for i in sample(rng, dim, nnz.min(dim)) {
        dense[i] = rng.gen_range(-1.5..1.5);
    }
    SparseVector::from_dense(&dense)
}

fn random_subset(rng: &mut ChaCha8Rng, n: usize, min: usize) -> Vec<u32> {
    let k = rng.gen_range(min.min(n)..=n);
    let mut v: Vec<u32> = sample(rng, n, k).into_iter().map(|i| i as u32).collect();
    v.sort_unstable();
    v
}

#[test]
fn sparse_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut checked = 0;
    let mut attempts = 0;
    while checked < 120 {
        attempts += 1;
        assert!(attempts < 2000, "too many rejected toy networks");
        let input_dim = rng.gen_range(2..7);
        let hidden = rng.gen_range(2..7);
        let outputs = rng.gen_range(2..7);
        let cfg = NetworkConfig {
            input_dim,
            layers: dense_layers(&[hidden, outputs]),
            batch_size: 1,
            seed: rng.gen(),
        };
        let net = Network::new(&cfg).unwrap();
        let nnz = rng.gen_range(1..=input_dim);
        let x = random_input(&mut rng, input_dim, nnz);
        let labels = random_subset(&mut rng, outputs, 1);
        let labels: Vec<u32> = labels.into_iter().take(2).collect();
        let h_active = random_subset(&mut rng, hidden, 1);
        let o_active = random_subset(&mut rng, outputs, 1);

        let oracle = DenseNet::from_network(&net).unwrap();
        // stay away from the ReLU kink where differences are meaningless
        let near_kink = h_active.iter().any(|&a| {
            let l = &oracle.layers[0];
            let z = l.biases[a as usize] + x.iter().map(|(i, v)| v * l.weights[a as usize][i as usize]).sum::<f64>();
            z.abs() < 0.05
        });
        if near_kink {
            continue;
        }
        let forced = vec![Some(h_active.clone()), Some(o_active.clone())];
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let trace = net.forward_with_active(&x, 0, &labels, &forced, &mut r).unwrap();
        let active = trace.active.clone();
        let mut grads = Vec::new();
        net.backward_with(&trace, &labels, 0, |l, a, g| {
            grads.push((l, a, g.indices.to_vec(), g.values.to_vec(), g.bias));
        })
        .unwrap();
        for (l, a, idx, vals, bias) in grads {
            let check = |param, g: f64| {
                let fd = oracle.finite_difference(&x, &labels, &active, param, 1e-3).unwrap();
                let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-4);
                assert!(rel <= 1e-4, "{param:?}: sparse {g} vs fd {fd}");
            };
            check(Param::Bias { layer: l, neuron: a as usize }, bias);
            for (i, g) in idx.into_iter().zip(vals) {
                check(
                    Param::Weight {
                        layer: l,
                        neuron: a as usize,
                        input: i as usize,
                    },
                    g,
                );
            }
        }
        checked += 1;
    }
}

fn lsh_net(seed: u64, batch_size: usize) -> Network {
    let cfg = NetworkConfig {
        input_dim: 40,
        layers: vec![
            LayerConfig {
                width: 32,
                sampling: LayerSampling::Lsh(LshLayerConfig {
                    hash: HashFamilyConfig::simhash(3, 6, 0, seed),
                    table: TableConfig::default(),
                    sampler: SamplerConfig::vanilla(6),
                }),
            },
            LayerConfig {
                width: 200,
                sampling: LayerSampling::Lsh(LshLayerConfig {
                    hash: HashFamilyConfig::simhash(4, 8, 0, seed + 1),
                    table: TableConfig::default(),
                    sampler: SamplerConfig::vanilla(10),
                }),
            },
        ],
        batch_size,
        seed,
    };
    Network::new(&cfg).unwrap()
}

fn snapshot(net: &Network) -> Vec<Vec<(Vec<f32>, f32)>> {
    net.layers()
        .iter()
        .map(|l| l.neurons().iter().map(|n| (n.weights(), n.bias())).collect())
        .collect()
}

#[test]
fn only_active_rows_are_touched_and_update_count_is_exact() {
    let mut net = lsh_net(5, 1);
    let log = Arc::new(AccessLog::default());
    net.set_access_log(Some(log.clone()));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..30 {
        let x = random_input(&mut rng, 40, 8);
        let labels = vec![rng.gen_range(0..200u32)];
        let before = snapshot(&net);
        let trace = net.forward(&x, 0, &labels, &mut rng).unwrap();
        net.backward(&trace, &labels, 0, &AdamConfig::default()).unwrap();
        let after = snapshot(&net);

        let accesses = log.take();
        let mut written = 0usize;
        for acc in &accesses {
            assert!(trace.active[acc.layer].binary_search(&acc.neuron).is_ok(), "inactive neuron touched");
            assert_eq!(acc.indices, trace.inputs[acc.layer].indices(), "inactive input weight touched");
            if acc.kind == AccessKind::Write {
                written += acc.indices.len();
            }
        }
        let identity: usize = (0..2).map(|l| trace.inputs[l].nnz() * trace.active[l].len()).sum();
        assert_eq!(written, identity);

        // parameter diff stays inside the touched set
        for l in 0..2 {
            let touched: HashSet<usize> = trace.inputs[l].indices().iter().map(|&i| i as usize).collect();
            for (a, (b, n)) in before[l].iter().zip(&after[l]).enumerate() {
                let active = trace.active[l].binary_search(&(a as u32)).is_ok();
                if !active {
                    assert_eq!(b, n);
                    continue;
                }
                for (i, (wb, wa)) in b.0.iter().zip(&n.0).enumerate() {
                    if wb != wa {
                        assert!(touched.contains(&i));
                    }
                }
            }
        }
    }
}

#[test]
fn output_softmax_is_normalized_on_every_call() {
    let net = lsh_net(9, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ws = net.workspace();
    for _ in 0..200 {
        let x = random_input(&mut rng, 40, 10);
        let t = net.infer(&x, &mut rng, &mut ws).unwrap();
        assert!((t.outputs.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
    }
}

#[test]
fn dense_network_follows_dense_trainer_for_fifty_iterations() {
    let cfg = NetworkConfig {
        input_dim: 20,
        layers: dense_layers(&[16, 10]),
        batch_size: 8,
        seed: 17,
    };
    let mut net = Network::new(&cfg).unwrap();
    let adam = AdamConfig {
        learning_rate: 0.01,
        ..Default::default()
    };
    let mut oracle = DenseTrainer::from_network(&net, adam).unwrap();
    let tc = TrainConfig {
        batch_size: 8,
        adam,
        workers: 1,
        seed: 5,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let data: Vec<(SparseVector, Vec<u32>)> = (0..64)
        .map(|_| (random_input(&mut rng, 20, 6), vec![rng.gen_range(0..10u32)]))
        .collect();
    for it in 0..50 {
        let start = (it * 8) % data.len();
        let batch: Vec<(&SparseVector, &[u32])> =
            data[start..start + 8].iter().map(|(x, y)| (x, y.as_slice())).collect();
        let sparse = net.train_batch(&batch, it as u64 + 1, &tc).unwrap().loss;
        let dense = oracle.train_batch(&batch).unwrap();
        assert!((sparse - dense).abs() <= 1e-6, "iteration {it}: {sparse} vs {dense}");
    }
    for (l, layer) in net.layers().iter().enumerate() {
        for (j, n) in layer.neurons().iter().enumerate() {
            let row = oracle.row(l, j);
            for (a, b) in n.weights().iter().zip(row) {
                assert!((a - b).abs() <= 1e-6);
            }
        }
    }
}

#[test]
fn concurrent_slots_match_sequential_with_deferred_updates() {
    let net = lsh_net(21, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let inputs: Vec<(SparseVector, Vec<u32>)> = (0..8)
        .map(|_| (random_input(&mut rng, 40, 8), vec![rng.gen_range(0..200u32)]))
        .collect();
    type Grads = Vec<(usize, u32, Vec<f64>, f64)>;
    let run = |slot: usize| -> (Vec<Vec<u32>>, Vec<f64>, Grads) {
        let (x, y) = &inputs[slot];
        let mut r = ChaCha8Rng::seed_from_u64(slot as u64);
        let t = net.forward(x, slot, y, &mut r).unwrap();
        let mut g = Vec::new();
        net.backward_with(&t, y, slot, |l, a, ng| g.push((l, a, ng.values.to_vec(), ng.bias)))
            .unwrap();
        (t.active, t.outputs, g)
    };
    let sequential: Vec<_> = (0..8).map(run).collect();
    let concurrent: Vec<_> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..8).map(|slot| s.spawn(move || run(slot))).collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    assert_eq!(sequential, concurrent);
}

#[test]
fn single_worker_training_is_reproducible() {
    let run = || {
        let mut net = lsh_net(33, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data: Vec<(SparseVector, Vec<u32>)> = (0..160)
            .map(|_| (random_input(&mut rng, 40, 8), vec![rng.gen_range(0..200u32)]))
            .collect();
        let tc = TrainConfig {
            batch_size: 16,
            ..Default::default()
        };
        for it in 0..60u64 {
            let s = (it as usize * 16) % 160;
            let batch: Vec<(&SparseVector, &[u32])> = data[s..s + 16].iter().map(|(x, y)| (x, y.as_slice())).collect();
            net.train_batch(&batch, it + 1, &tc).unwrap();
        }
        let mut bytes = Vec::new();
        net.write_checkpoint(&mut bytes, true).unwrap();
        bytes
    };
    assert_eq!(run(), run());
}

#[test]
fn single_batch_single_worker_equals_plain_forward_backward() {
    let mut a = lsh_net(40, 1);
    let b = lsh_net(40, 1);
    let x = SparseVector::from_dense(&(0..40).map(|i| (i % 3) as f64).collect::<Vec<_>>());
    let y = vec![7u32];
    let tc = TrainConfig::default();
    a.train_batch(&[(&x, &y)], 1, &tc).unwrap();
    let mut bytes_a = Vec::new();
    a.write_checkpoint(&mut bytes_a, true).unwrap();
    let mut ws = b.workspace();
    let mut rng = slide_core::net::slot_rng(tc.seed, 1, 0);
    let t = b.forward_in(&x, 0, &y, &mut rng, &mut ws).unwrap();
    b.backward(&t, &y, 0, &tc.adam).unwrap();
    let mut bytes_b = Vec::new();
    b.write_checkpoint(&mut bytes_b, true).unwrap();
    assert_eq!(bytes_a, bytes_b);
}

#[test]
fn four_workers_reach_single_worker_accuracy() {
    let (train, test) = synthetic(&SyntheticConfig {
        num_train: 2000,
        num_test: 400,
        dim: 100,
        num_labels: 40,
        group_size: 4,
        group_features: 6,
        label_features: 3,
        max_labels: 1,
        ..Default::default()
    });
    let p_at_1 = |workers: usize| {
        let mut net = Network::new(&NetworkConfig {
            input_dim: 100,
            layers: dense_layers(&[32, 40]),
            batch_size: 32,
            seed: 3,
        })
        .unwrap();
        let tc = TrainConfig {
            batch_size: 32,
            workers,
            adam: AdamConfig {
                learning_rate: 0.005,
                ..Default::default()
            },
            ..Default::default()
        };
        let batches = train.batches(32, 1);
        for (it, b) in batches.iter().cycle().take(100).enumerate() {
            let batch: Vec<(&SparseVector, &[u32])> = b
                .iter()
                .map(|&i| (&train.examples[i].features, train.examples[i].labels.as_slice()))
                .collect();
            net.train_batch(&batch, it as u64 + 1, &tc).unwrap();
        }
        test.examples
            .iter()
            .map(|ex| precision_at_k(&net.predict(&ex.features).unwrap(), &ex.labels, 1))
            .sum::<f64>()
            / test.len() as f64
    };
    let one = p_at_1(1);
    let four = p_at_1(4);
    assert!(one > 0.5, "single worker failed to learn: {one}");
    assert!((one - four).abs() <= 0.02, "1 worker {one} vs 4 workers {four}");
}

#[test]
fn predict_examples() {
    // one output neuron
    let net = Network::new(&NetworkConfig {
        input_dim: 3,
        layers: dense_layers(&[1]),
        batch_size: 1,
        seed: 0,
    })
    .unwrap();
    assert_eq!(net.predict(&SparseVector::from_dense(&[1.0, 2.0, 3.0])).unwrap(), vec![0]);

    // dense net ranks like the dense oracle
    let net = Network::new(&NetworkConfig {
        input_dim: 8,
        layers: dense_layers(&[6, 12]),
        batch_size: 1,
        seed: 4,
    })
    .unwrap();
    let oracle = DenseNet::from_network(&net).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..20 {
        let x = random_input(&mut rng, 8, 5);
        let probs = oracle.forward_backward(&x, &[]).unwrap().outputs;
        let mut expected: Vec<u32> = (0..12).collect();
        expected.sort_by(|&a, &b| probs[b as usize].total_cmp(&probs[a as usize]).then(a.cmp(&b)));
        assert_eq!(net.predict(&x).unwrap(), expected);
    }

    // tables holding only neuron 7
    let mut net = Network::new(&NetworkConfig {
        input_dim: 10,
        layers: vec![LayerConfig {
            width: 20,
            sampling: LayerSampling::Lsh(LshLayerConfig {
                hash: HashFamilyConfig::simhash(2, 4, 0, 1),
                table: TableConfig::default(),
                sampler: SamplerConfig::vanilla(1),
            }),
        }],
        batch_size: 1,
        seed: 2,
    })
    .unwrap();
    let x = random_input(&mut rng, 10, 4);
    let tables = net.layer_mut(0).tables_mut().unwrap();
    let codes = tables.family().hash(&x).unwrap();
    tables.insert_entries(&[(7, codes)]);
    assert_eq!(net.predict(&x).unwrap(), vec![7]);
}
