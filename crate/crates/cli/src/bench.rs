//! Timing harnesses for sampling strategies, table insertion and worker
//! scaling.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use slide_core::hash::{HashCodes, HashFamilyConfig};
use slide_core::sampler::{self, SamplerConfig, SamplerScratch, SamplingStrategy};
use slide_core::table::{InsertPolicy, LshTables, RawCandidates, TableConfig};

use crate::config::RunConfig;
use crate::train::{load_data, train};
use crate::{write_csv, CliError};

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerRow {
    pub strategy: SamplingStrategy,
    /// Total candidate ids across all buckets.
    pub n: usize,
    /// Mean seconds per sampling call.
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InsertionRow {
    pub policy: InsertPolicy,
    /// Filling the tables from precomputed keys.
    pub insert_seconds: f64,
    /// Hashing every neuron and filling the tables.
    pub full_seconds: f64,
    /// Ids stored per table after the bare insert.
    pub occupancy: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingRow {
    pub workers: usize,
    pub seconds: f64,
    pub final_p_at_1: f64,
}

fn strategy_name(s: SamplingStrategy) -> &'static str {
    match s {
        SamplingStrategy::Vanilla => "vanilla",
        SamplingStrategy::TopK => "topk",
        SamplingStrategy::HardThreshold => "threshold",
    }
}

fn policy_name(p: InsertPolicy) -> &'static str {
    match p {
        InsertPolicy::Fifo => "fifo",
        InsertPolicy::Reservoir => "reservoir",
    }
}

/// `tables` buckets holding `n` ids in total, drawn from `0..n` so that ids
/// repeat across buckets.
pub fn candidate_stream(n: usize, tables: usize, seed: u64) -> Vec<Vec<u32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per = n.div_ceil(tables.max(1));
    (0..tables)
        .map(|t| {
            let len = per.min(n.saturating_sub(t * per));
            (0..len).map(|_| rng.gen_range(0..n as u32)).collect()
        })
        .collect()
}

/// Times every strategy on the same candidate stream at each configured size.
pub fn bench_samplers(cfg: &RunConfig) -> Result<Vec<SamplerRow>, CliError> {
    let b = &cfg.bench;
    if b.repeats == 0 || b.sample_tables == 0 {
        return Err(CliError::Config("bench.repeats and bench.sample_tables must be positive".into()));
    }
    let mut rows = Vec::new();
    for &n in &b.sample_sizes {
        let buckets = candidate_stream(n, b.sample_tables, cfg.seed);
        let raw = RawCandidates::from_owned(&buckets);
        let configs = [
            SamplerConfig::vanilla(((n as f64 * b.vanilla_beta_fraction) as usize).max(1)),
            SamplerConfig::top_k(((n as f64 * b.vanilla_beta_fraction) as usize).max(1)),
            SamplerConfig::hard_threshold(b.threshold_min_freq.clamp(1, b.sample_tables)),
        ];
        for sc in configs {
            let mut scratch = SamplerScratch::new(n);
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            // warm the scratch buffers once
            let mut sink = sampler::sample(&raw, &sc, &mut rng, &mut scratch).active_ids.len();
            let t0 = Instant::now();
            for _ in 0..b.repeats {
                sink += sampler::sample(&raw, &sc, &mut rng, &mut scratch).active_ids.len();
            }
            let seconds = t0.elapsed().as_secs_f64() / b.repeats as f64;
            std::hint::black_box(sink);
            rows.push(SamplerRow {
                strategy: sc.strategy,
                n,
                seconds,
            });
        }
    }
    Ok(rows)
}

/// Full build versus bare insertion for both bucket policies.
pub fn bench_insertion(cfg: &RunConfig) -> Result<Vec<InsertionRow>, CliError> {
    let b = &cfg.bench;
    let hash = HashFamilyConfig {
        dim: b.dim,
        ..cfg.hash.to_core(cfg.seed)?
    };
    let rows: Vec<Vec<f32>> = (0..b.neurons)
        .into_par_iter()
        .map(|id| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (id as u64).wrapping_mul(0x9e37_79b9));
            (0..b.dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect()
        })
        .collect();
    let mut out = Vec::new();
    for policy in [InsertPolicy::Fifo, InsertPolicy::Reservoir] {
        let table = TableConfig {
            policy,
            ..cfg.table.to_core(cfg.seed)?
        };
        let mut tables = LshTables::new(hash.clone(), table)?;
        let t0 = Instant::now();
        tables.build(&rows)?;
        let full_seconds = t0.elapsed().as_secs_f64();
        let codes: Vec<HashCodes> = if b.forced_collisions {
            vec![HashCodes(vec![0; tables.num_tables()]); b.neurons]
        } else {
            (0..b.neurons)
                .map(|id| tables.cached_codes(id).expect("simhash cache"))
                .collect()
        };
        let reps = cfg.bench.repeats.max(1);
        let t0 = Instant::now();
        for _ in 0..reps {
            tables.insert_all(&codes);
        }
        let insert_seconds = t0.elapsed().as_secs_f64() / reps as f64;
        out.push(InsertionRow {
            policy,
            insert_seconds,
            full_seconds,
            occupancy: (0..tables.num_tables()).map(|t| tables.occupancy(t)).collect(),
        });
    }
    Ok(out)
}

/// Fixed-iteration training at each configured worker count.
pub fn bench_scaling(cfg: &RunConfig) -> Result<Vec<ScalingRow>, CliError> {
    let (train_set, test_set) = load_data(cfg)?;
    let mut rows = Vec::new();
    for &workers in &cfg.bench.worker_counts {
        let mut run = cfg.clone();
        run.workers = workers;
        // evaluate only once, at the end
        run.train.eval_every = i64::MAX as u64;
        let outcome = train(&run, &train_set, &test_set, Some(cfg.bench.scaling_iterations), |_| {})?;
        rows.push(ScalingRow {
            workers,
            seconds: outcome.train_seconds,
            final_p_at_1: outcome.final_p_at_1(),
        });
    }
    Ok(rows)
}

pub fn run_bench_samplers(cfg: &RunConfig) -> Result<Vec<SamplerRow>, CliError> {
    let rows = bench_samplers(cfg)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![strategy_name(r.strategy).into(), r.n.to_string(), format!("{:.9}", r.seconds)])
        .collect();
    write_csv(&cfg.out_dir.join("bench_samplers.csv"), &cfg.hash(), &["strategy", "n", "seconds"], &body)?;
    Ok(rows)
}

pub fn run_bench_insertion(cfg: &RunConfig) -> Result<Vec<InsertionRow>, CliError> {
    let rows = bench_insertion(cfg)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                policy_name(r.policy).into(),
                format!("{:.9}", r.insert_seconds),
                format!("{:.9}", r.full_seconds),
            ]
        })
        .collect();
    write_csv(
        &cfg.out_dir.join("bench_insertion.csv"),
        &cfg.hash(),
        &["policy", "insert_seconds", "full_seconds"],
        &body,
    )?;
    Ok(rows)
}

pub fn run_bench_scaling(cfg: &RunConfig) -> Result<Vec<ScalingRow>, CliError> {
    let rows = bench_scaling(cfg)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.workers.to_string(), format!("{:.6}", r.seconds), format!("{:.6}", r.final_p_at_1)])
        .collect();
    write_csv(
        &cfg.out_dir.join("bench_scaling.csv"),
        &cfg.hash(),
        &["workers", "seconds", "final_p_at_1"],
        &body,
    )?;
    Ok(rows)
}
