use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;

use slide_core::data::{precision_at_k, synthetic, Dataset};
use slide_core::net::{NetError, Network};
use slide_core::SparseVector;

use crate::config::{Normalize, RunConfig};
use crate::{write_csv, CliError};

/// One evaluation point of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub iteration: u64,
    pub wall_seconds: f64,
    /// Mean batch loss since the previous row.
    pub train_loss: f64,
    pub p_at_1: f64,
    pub p_at_5: f64,
    /// Mean active fraction since the previous row, one entry per hashed
    /// layer.
    pub active_fraction: Vec<f64>,
}

pub struct TrainOutcome {
    pub network: Network,
    pub rows: Vec<EvalRow>,
    pub iterations: u64,
    /// Seconds spent inside `train_batch`, excluding evaluation.
    pub train_seconds: f64,
}

impl TrainOutcome {
    pub fn final_p_at_1(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.p_at_1)
    }
}

pub struct TrainReport {
    pub outcome: TrainOutcome,
    pub csv: PathBuf,
    pub checkpoint: Option<PathBuf>,
}

/// Train and test sets named by the config, or a synthetic pair. Examples
/// without labels are dropped from the training set.
pub fn load_data(cfg: &RunConfig) -> Result<(Dataset, Dataset), CliError> {
    let (mut train, mut test) = match (&cfg.data.train, &cfg.data.test) {
        (Some(tr), Some(te)) => (Dataset::load(tr)?, Dataset::load(te)?),
        _ => synthetic(&cfg.data.synthetic.to_core(cfg.seed)),
    };
    if train.num_features != test.num_features || train.num_labels != test.num_labels {
        return Err(CliError::Config(format!(
            "train is {}x{}, test is {}x{}",
            train.num_features, train.num_labels, test.num_features, test.num_labels
        )));
    }
    train.examples.retain(|e| !e.labels.is_empty());
    if train.is_empty() {
        return Err(CliError::Config("no labelled training examples".into()));
    }
    if cfg.data.normalize == Normalize::L2 {
        train.normalize_l2();
        test.normalize_l2();
    }
    Ok((train, test))
}

/// Mean P@1 and P@5 over `test`.
pub fn evaluate(net: &Network, test: &Dataset) -> Result<(f64, f64), CliError> {
    if test.is_empty() {
        return Ok((0.0, 0.0));
    }
    let scores: Vec<(f64, f64)> = test
        .examples
        .par_iter()
        .map(|ex| {
            let ranked = net.predict(&ex.features)?;
            Ok((
                precision_at_k(&ranked, &ex.labels, 1),
                precision_at_k(&ranked, &ex.labels, 5),
            ))
        })
        .collect::<Result<_, NetError>>()?;
    let n = scores.len() as f64;
    Ok((
        scores.iter().map(|s| s.0).sum::<f64>() / n,
        scores.iter().map(|s| s.1).sum::<f64>() / n,
    ))
}

/// Trains a fresh network, evaluating every `eval_every` iterations and at
/// the end. `iterations` overrides the configured epoch/iteration limit.
pub fn train(
    cfg: &RunConfig,
    train: &Dataset,
    test: &Dataset,
    iterations: Option<u64>,
    mut on_eval: impl FnMut(&EvalRow),
) -> Result<TrainOutcome, CliError> {
    cfg.validate()?;
    let mut net = Network::new(&cfg.network_config(train.num_features, train.num_labels)?)?;
    let tc = cfg.train_config();
    let eval_set = test.subsample(cfg.data.eval_subsample, cfg.seed ^ 0xe7a1);
    let hashed: Vec<usize> = (0..net.layers().len())
        .filter(|&l| net.layer(l).tables().is_some())
        .collect();
    let limit = iterations.or(cfg.train.max_iterations).unwrap_or(u64::MAX);
    let epochs = if iterations.is_some() { usize::MAX } else { cfg.train.epochs };

    let start = Instant::now();
    let mut train_seconds = 0.0;
    let mut rows = Vec::new();
    let mut iteration = 0u64;
    let (mut loss_sum, mut frac_sum, mut batches) = (0.0, vec![0.0; hashed.len()], 0usize);
    let record = |net: &Network, iteration: u64, loss_sum: &mut f64, frac_sum: &mut Vec<f64>, batches: &mut usize| {
        let (p1, p5) = evaluate(net, &eval_set)?;
        let n = (*batches).max(1) as f64;
        let row = EvalRow {
            iteration,
            wall_seconds: start.elapsed().as_secs_f64(),
            train_loss: *loss_sum / n,
            p_at_1: p1,
            p_at_5: p5,
            active_fraction: frac_sum.iter().map(|f| f / n).collect(),
        };
        *loss_sum = 0.0;
        frac_sum.iter_mut().for_each(|f| *f = 0.0);
        *batches = 0;
        Ok::<EvalRow, CliError>(row)
    };

    'outer: for epoch in 0..epochs {
        for batch in train.batches(tc.batch_size, cfg.seed.wrapping_add(epoch as u64)) {
            if iteration >= limit {
                break 'outer;
            }
            iteration += 1;
            let items: Vec<(&SparseVector, &[u32])> = batch
                .iter()
                .map(|&i| (&train.examples[i].features, train.examples[i].labels.as_slice()))
                .collect();
            let t0 = Instant::now();
            let stats = match net.train_batch(&items, iteration, &tc) {
                Err(NetError::NonFiniteLoss(it)) => {
                    return Err(CliError::Diverged(format!(
                        "loss became non-finite at iteration {it}; try a smaller learning rate (now {})",
                        tc.adam.learning_rate
                    )))
                }
                other => other?,
            };
            train_seconds += t0.elapsed().as_secs_f64();
            loss_sum += stats.loss;
            for (f, &l) in frac_sum.iter_mut().zip(&hashed) {
                *f += stats.active_fraction[l];
            }
            batches += 1;
            if iteration % cfg.train.eval_every == 0 {
                let row = record(&net, iteration, &mut loss_sum, &mut frac_sum, &mut batches)?;
                on_eval(&row);
                rows.push(row);
            }
        }
        if iterations.is_some() && iteration == 0 {
            break;
        }
    }
    if rows.last().map(|r: &EvalRow| r.iteration) != Some(iteration) {
        let row = record(&net, iteration, &mut loss_sum, &mut frac_sum, &mut batches)?;
        on_eval(&row);
        rows.push(row);
    }
    Ok(TrainOutcome {
        network: net,
        rows,
        iterations: iteration,
        train_seconds,
    })
}

/// The `train` command: trains, writes `train.csv` and `model.ckpt` under
/// the output directory.
pub fn run_train(cfg: &RunConfig) -> Result<TrainReport, CliError> {
    cfg.validate()?;
    let (train_set, test_set) = load_data(cfg)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let outcome = train(cfg, &train_set, &test_set, None, |r| {
        eprintln!(
            "iter {:>6}  {:>8.2}s  loss {:.4}  P@1 {:.4}  P@5 {:.4}",
            r.iteration, r.wall_seconds, r.train_loss, r.p_at_1, r.p_at_5
        )
    })?;

    let hashed: Vec<usize> = (0..outcome.network.layers().len())
        .filter(|&l| outcome.network.layer(l).tables().is_some())
        .collect();
    let mut header: Vec<String> = ["iteration", "wall_seconds", "train_loss", "test_p_at_1", "test_p_at_5"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(hashed.iter().map(|l| format!("active_fraction_layer{l}")));
    let rows: Vec<Vec<String>> = outcome
        .rows
        .iter()
        .map(|r| {
            let mut v = vec![
                r.iteration.to_string(),
                format!("{:.6}", r.wall_seconds),
                format!("{:.8}", r.train_loss),
                format!("{:.6}", r.p_at_1),
                format!("{:.6}", r.p_at_5),
            ];
            v.extend(r.active_fraction.iter().map(|f| format!("{f:.6}")));
            v
        })
        .collect();
    let csv = cfg.out_dir.join("train.csv");
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(&csv, &cfg.hash(), &header_refs, &rows)?;

    let checkpoint = if cfg.train.checkpoint {
        let path = cfg.out_dir.join("model.ckpt");
        outcome.network.save_checkpoint(&path, true)?;
        Some(path)
    } else {
        None
    };
    Ok(TrainReport {
        outcome,
        csv,
        checkpoint,
    })
}
