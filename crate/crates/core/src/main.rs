use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use pege::experiment::{run_experiment, ExperimentConfig, ExperimentKind};

/// Run a configured learning experiment and write its tables.
#[derive(Parser, Debug)]
#[command(name = "pege", version)]
struct Cli {
    experiment: ExperimentKind,
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Override the number of seeds.
    #[arg(long)]
    seeds: Option<usize>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

fn run(cli: Cli) -> pege::Result<()> {
    let mut cfg = ExperimentConfig::load(&cli.config)?;
    if let Some(n) = cli.seeds {
        cfg = cfg.with_seed_count(n);
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(k) = cli.threads {
        pool = pool.num_threads(k);
    }
    let pool = pool
        .build()
        .map_err(|e| pege::Error::InvalidArgument(format!("thread pool: {e}")))?;
    let summary = pool.install(|| run_experiment(cli.experiment, &cfg, &cli.out))?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
