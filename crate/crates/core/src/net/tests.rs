use super::*;
use crate::hash::HashFamilyConfig;

fn dense_cfg(input_dim: usize, widths: &[usize], batch_size: usize) -> NetworkConfig {
    NetworkConfig {
        input_dim,
        layers: widths
            .iter()
            .map(|&width| LayerConfig {
                width,
                sampling: LayerSampling::Dense,
            })
            .collect(),
        batch_size,
        seed: 3,
    }
}

fn toy() -> Network {
    let net = Network::new(&dense_cfg(2, &[3, 2], 1)).unwrap();
    let h = net.layer(0);
    h.neuron(0).set_weights(&[1.0, 0.0]);
    h.neuron(1).set_weights(&[0.0, 1.0]);
    h.neuron(2).set_weights(&[1.0, -1.0]);
    h.neuron(2).set_bias(-5.0);
    let o = net.layer(1);
    o.neuron(0).set_weights(&[1.0, 1.0, 1.0]);
    o.neuron(1).set_weights(&[-1.0, 0.5, 2.0]);
    net
}

fn x() -> SparseVector {
    SparseVector::from_dense(&[0.5, 2.0])
}

#[test]
fn toy_forward_matches_hand_computation() {
    let net = toy();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let t = net.forward(&x(), 0, &[1], &mut rng).unwrap();
    // hidden: [0.5, 2.0, relu(0.5-2-5)=0]
    assert_eq!(t.inputs[1].indices(), &[0, 1]);
    assert_eq!(t.inputs[1].values(), &[0.5, 2.0]);
    let z0: f64 = 2.5;
    let z1: f64 = -0.5 + 1.0;
    let e = (z1 - z0).exp();
    let p1 = e / (1.0 + e);
    assert!((t.outputs[1] - p1).abs() < 1e-12);
    assert!((t.outputs[0] - (1.0 - p1)).abs() < 1e-12);
    assert!((t.loss(&[1]) + p1.ln()).abs() < 1e-12);
}

#[test]
fn backward_updates_only_rows_read() {
    let net = toy();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let t = net.forward(&x(), 0, &[1], &mut rng).unwrap();
    let before = net.layer(0).neuron(2).weights();
    net.backward(&t, &[1], 0, &AdamConfig::default()).unwrap();
    // neuron 2 is active (ReLU output 0) so it takes a zero-gradient step
    assert_eq!(net.layer(0).neuron(2).weights(), before);
    assert_eq!(net.layer(0).neuron(2).steps(), 1);
    // the output weight from hidden unit 2 was never read
    assert_eq!(net.layer(1).neuron(0).weight(2), 1.0);
    assert_ne!(net.layer(1).neuron(0).weight(0), 1.0);
    for n in net.layer(0).neurons() {
        assert!(!n.is_active(0));
        assert_eq!(n.gradient(0), 0.0);
    }
}

#[test]
fn gradient_sink_matches_hand_derivation() {
    let net = toy();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let t = net.forward(&x(), 0, &[1], &mut rng).unwrap();
    let p = t.outputs.clone();
    let mut got = Vec::new();
    net.backward_with(&t, &[1], 0, |l, a, g| got.push((l, a, g.values.to_vec(), g.bias)))
        .unwrap();
    let d_out = [p[0], p[1] - 1.0];
    assert_eq!(got[0], (1, 0, vec![d_out[0] * 0.5, d_out[0] * 2.0], d_out[0]));
    let d_h0 = 1.0 * d_out[0] + -1.0 * d_out[1];
    let (l, a, vals, b) = &got[2];
    assert_eq!((*l, *a), (0, 0));
    assert!((b - d_h0).abs() < 1e-12);
    assert!((vals[0] - d_h0 * 0.5).abs() < 1e-12);
    // untouched parameters
    assert_eq!(net.layer(1).neuron(0).weights(), vec![1.0, 1.0, 1.0]);
}

#[test]
fn labels_are_forced_into_output_set() {
    let cfg = NetworkConfig {
        input_dim: 8,
        layers: vec![
            LayerConfig {
                width: 6,
                sampling: LayerSampling::Dense,
            },
            LayerConfig {
                width: 50,
                sampling: LayerSampling::Uniform { count: 3 },
            },
        ],
        batch_size: 2,
        seed: 1,
    };
    let net = Network::new(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let v = SparseVector::from_dense(&[1.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0]);
    let t = net.forward(&v, 1, &[41, 7], &mut rng).unwrap();
    let out = &t.active[1];
    assert!(out.contains(&41) && out.contains(&7));
    assert!(out.len() <= 5);
    assert!((t.outputs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    // inference scores all outputs of a uniformly sampled layer
    assert_eq!(net.predict(&v).unwrap().len(), 50);
}

#[test]
fn rejects_bad_inputs() {
    let net = toy();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let wrong = SparseVector::zeros(3);
    assert_eq!(
        net.forward(&wrong, 0, &[], &mut rng).unwrap_err(),
        NetError::DimensionMismatch { expected: 2, got: 3 }
    );
    assert!(matches!(
        net.forward(&x(), 1, &[], &mut rng),
        Err(NetError::SlotOutOfRange { .. })
    ));
    assert!(matches!(
        net.forward(&x(), 0, &[2], &mut rng),
        Err(NetError::LabelOutOfRange { label: 2, width: 2 })
    ));
    let t = net.forward(&x(), 0, &[0], &mut rng).unwrap();
    let mut bigger = Network::new(&dense_cfg(2, &[3, 2], 2)).unwrap();
    bigger.set_access_log(None);
    assert!(matches!(
        bigger.backward(&t, &[0], 1, &AdamConfig::default()),
        Err(NetError::TraceSlotMismatch { .. })
    ));
}

#[test]
fn no_labels_means_no_update() {
    let net = toy();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let t = net.forward(&x(), 0, &[], &mut rng).unwrap();
    net.backward(&t, &[], 0, &AdamConfig::default()).unwrap();
    assert_eq!(net.layer(1).neuron(0).steps(), 0);
    assert_eq!(net.layer(1).neuron(0).weights(), vec![1.0, 1.0, 1.0]);
}

#[test]
fn hash_dim_defaults_to_fan_in_and_mismatch_is_rejected() {
    let lsh = |dim| LshLayerConfig {
        hash: HashFamilyConfig::simhash(3, 4, dim, 5),
        table: TableConfig::default(),
        sampler: SamplerConfig::vanilla(4),
    };
    let mut cfg = dense_cfg(10, &[16, 40], 1);
    cfg.layers[1].sampling = LayerSampling::Lsh(lsh(0));
    let net = Network::new(&cfg).unwrap();
    assert_eq!(net.layer(1).tables().unwrap().family().dim(), 16);
    cfg.layers[1].sampling = LayerSampling::Lsh(lsh(10));
    assert!(matches!(Network::new(&cfg), Err(NetError::Config(_))));
}

#[test]
fn training_reduces_loss_on_separable_toy() {
    let mut cfg = dense_cfg(4, &[8, 2], 4);
    cfg.seed = 11;
    let mut net = Network::new(&cfg).unwrap();
    let xs = [
        SparseVector::from_dense(&[1.0, 0.0, 0.0, 0.0]),
        SparseVector::from_dense(&[0.0, 1.0, 0.0, 0.0]),
        SparseVector::from_dense(&[0.0, 0.0, 1.0, 0.0]),
        SparseVector::from_dense(&[0.0, 0.0, 0.0, 1.0]),
    ];
    let ys: [&[u32]; 4] = [&[0], &[0], &[1], &[1]];
    let batch: Vec<(&SparseVector, &[u32])> = xs.iter().zip(ys).collect();
    let tc = TrainConfig {
        adam: AdamConfig {
            learning_rate: 0.05,
            ..Default::default()
        },
        workers: 2,
        ..Default::default()
    };
    let first = net.train_batch(&batch, 1, &tc).unwrap().loss;
    let mut last = first;
    for it in 2..=60 {
        last = net.train_batch(&batch, it, &tc).unwrap().loss;
    }
    assert!(last < first * 0.2, "{first} -> {last}");
    assert_eq!(net.predict(&xs[3]).unwrap()[0], 1);
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let mut cfg = dense_cfg(5, &[4, 3], 1);
    let net = Network::new(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let v = SparseVector::from_dense(&[1.0, 0.0, 2.0, 0.0, -1.0]);
    let t = net.forward(&v, 0, &[2], &mut rng).unwrap();
    net.backward(&t, &[2], 0, &AdamConfig::default()).unwrap();
    let mut bytes = Vec::new();
    net.write_checkpoint(&mut bytes, true).unwrap();
    assert_eq!(&bytes[..4], b"SLDE");

    cfg.seed = 99;
    let mut other = Network::new(&cfg).unwrap();
    other.read_checkpoint(&mut bytes.as_slice()).unwrap();
    for (a, b) in net.layers().iter().zip(other.layers()) {
        for (na, nb) in a.neurons().iter().zip(b.neurons()) {
            assert_eq!(na.weights(), nb.weights());
            assert_eq!(na.bias(), nb.bias());
            assert_eq!(na.moments(), nb.moments());
            assert_eq!(na.steps(), nb.steps());
        }
    }

    let mut wrong = Network::new(&dense_cfg(5, &[4, 4], 1)).unwrap();
    assert!(matches!(
        wrong.read_checkpoint(&mut bytes.as_slice()),
        Err(NetError::Checkpoint(_))
    ));
    bytes.truncate(bytes.len() - 3);
    assert!(other.read_checkpoint(&mut bytes.as_slice()).is_err());
}
