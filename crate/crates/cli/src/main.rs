use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use slide_cli::bench::{run_bench_insertion, run_bench_samplers, run_bench_scaling};
use slide_cli::train::run_train;
use slide_cli::{CliError, RunConfig};

#[derive(Parser)]
#[command(name = "slide", version, about = "Hash-sampled sparse network training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network and write train.csv and model.ckpt
    Train(Common),
    /// Time the three sampling strategies
    BenchSamplers(Common),
    /// Time table building under both bucket policies
    BenchInsertion(Common),
    /// Time fixed-iteration training at several worker counts
    BenchScaling(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Worker threads; beats SLIDE_THREADS and the config file
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Ok(v) = std::env::var("SLIDE_THREADS") {
            cfg.workers = v
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("SLIDE_THREADS={v:?} is not a worker count")))?;
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(c) => {
            let report = run_train(&c.resolve()?)?;
            println!("{}", report.csv.display());
            if let Some(p) = report.checkpoint {
                println!("{}", p.display());
            }
        }
        Command::BenchSamplers(c) => {
            for r in run_bench_samplers(&c.resolve()?)? {
                println!("{:?} n={} {:.6}s", r.strategy, r.n, r.seconds);
            }
        }
        Command::BenchInsertion(c) => {
            for r in run_bench_insertion(&c.resolve()?)? {
                println!("{:?} insert {:.6}s full {:.6}s", r.policy, r.insert_seconds, r.full_seconds);
            }
        }
        Command::BenchScaling(c) => {
            for r in run_bench_scaling(&c.resolve()?)? {
                println!("workers {} {:.3}s P@1 {:.4}", r.workers, r.seconds, r.final_p_at_1);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("slide: {e}");
            ExitCode::FAILURE
        }
    }
}
