//! Command-line experiment runner: `generate`, `train`, `evaluate` and `compare`.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub mod compare;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod generate;
pub mod svg;
pub mod train;

pub use error::{CliError, CliResult};

/// Environment variable capping the number of parallel training or evaluation jobs.
pub const THREADS_ENV: &str = "POINTSENTINEL_THREADS";

#[derive(Debug, Parser)]
#[command(name = "pointsentinel", version, about = "Single-object point detection experiments")]
pub struct Cli {
    /// Overrides the scene seed (generate) or the seed list (train, evaluate).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Replace existing outputs instead of refusing to touch them.
    #[arg(long, global = true)]
    pub overwrite: bool,
    /// Output directory; overrides the one named in a spec file.
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    /// Suppress progress output.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic dataset (PGM images plus records.csv).
    Generate {
        /// Generation config (JSON).
        config: PathBuf,
    },
    /// Train every head×seed job of an experiment spec.
    Train {
        /// Experiment spec (JSON).
        spec: PathBuf,
        /// Continue from existing checkpoints.
        #[arg(long, conflicts_with = "overwrite")]
        resume: bool,
        /// Stop every job once it has completed this many epochs.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Evaluate trained checkpoints on the test and presence sets.
    Evaluate {
        /// Experiment spec (JSON).
        spec: PathBuf,
    },
    /// Compare two evaluation output directories.
    Compare { run_a: PathBuf, run_b: PathBuf },
}

/// Progress printer honouring `--quiet`.
#[derive(Clone, Copy, Debug)]
pub struct Log {
    pub quiet: bool,
}

impl Log {
    pub fn info(&self, msg: impl std::fmt::Display) {
        if !self.quiet {
            println!("{msg}");
        }
    }
}

/// Parallel job limit from [`THREADS_ENV`], defaulting to the available cores.
pub fn job_threads() -> CliResult<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(error::invalid!("{THREADS_ENV} must be a positive integer, got {v:?}")),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Runs `f` over `items` on at most `threads` worker threads, keeping input order.
pub fn par_map<T: Sync, R: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    if threads <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<Option<R>>> = items.iter().map(|_| std::sync::Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..threads.min(items.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                *slots[i].lock().expect("result slot") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("result slot").expect("job ran"))
        .collect()
}

pub fn run(cli: Cli) -> CliResult<()> {
    let log = Log { quiet: cli.quiet };
    match &cli.command {
        Command::Generate { config } => generate::run(&cli, config, log),
        Command::Train {
            spec,
            resume,
            stop_after,
        } => train::run(&cli, spec, *resume, *stop_after, log),
        Command::Evaluate { spec } => evaluate::run(&cli, spec, log),
        Command::Compare { run_a, run_b } => compare::run(&cli, run_a, run_b, log),
    }
}
