mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use thiserror::Error;

use config::{Mode, RunConfig};
use run::Outcome;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Problem(#[from] friedrichs::problems::ProblemError),
    #[error(transparent)]
    Train(#[from] friedrichs::trainer::TrainError),
    #[error(transparent)]
    Network(#[from] friedrichs::network::NetworkError),
    #[error(transparent)]
    Metrics(#[from] friedrichs::metrics::MetricsError),
    #[error(transparent)]
    Sampler(#[from] friedrichs::sampler::SamplerError),
    #[error(transparent)]
    Verify(#[from] friedrichs::verify::VerifyError),
}

/// Train, evaluate or verify Friedrichs learning presets.
#[derive(Debug, Parser)]
#[command(name = "friedrichs", version)]
struct Args {
    /// TOML run configuration; flags take precedence over its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Outer iterations `n`.
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Worker threads; affects speed only.
    #[arg(long)]
    workers: Option<usize>,
    /// Checkpoint to evaluate.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

fn load(args: Args) -> Result<RunConfig, CliError> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::from_toml(&std::fs::read_to_string(p)?)?,
        None => RunConfig::default(),
    };
    cfg.preset = args.preset.or(cfg.preset);
    cfg.seed = args.seed.or(cfg.seed);
    cfg.out = args.out.or(cfg.out);
    cfg.mode = args.mode.or(cfg.mode);
    cfg.workers = args.workers.or(cfg.workers);
    cfg.checkpoint = args.checkpoint.or(cfg.checkpoint);
    if args.iters.is_some() {
        cfg.train.n = args.iters;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cfg = match load(Args::parse()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(w) = cfg.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(w.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run::run(&cfg) {
        Ok(Outcome::Trained(r)) => {
            println!(
                "{}: {} iterations, e_L2 = {:e}{}",
                r.preset,
                r.iterations,
                r.e_l2,
                r.e_linf.map(|v| format!(", e_Linf = {v:e}")).unwrap_or_default()
            );
            ExitCode::SUCCESS
        }
        Ok(Outcome::Evaluated(r)) => {
            println!("{}: e_L2 = {:e}", r.preset, r.e_l2);
            if let Some(s) = r.stored_e_l2 {
                println!("stored e_L2 = {s:e}, difference {:e}", (s - r.e_l2).abs());
            }
            ExitCode::SUCCESS
        }
        Ok(Outcome::Verified(checks)) => {
            for c in &checks {
                println!("{c}");
            }
            if checks.iter().all(|c| c.pass) {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
