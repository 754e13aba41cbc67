use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use acmc::harness::config::ExperimentConfig;
use acmc::harness::oracle_check::run_oracle_check;
use acmc::harness::train::{metrics_csv, run_train};
use acmc::harness::tree_build::{run_tree_build, TreeBuildConfig};
use acmc::harness::variance::{run_variance, variance_csv};
use acmc::Error;

#[derive(Parser)]
#[command(name = "acmc", version, about = "Correlated Monte Carlo policy gradients for sequence generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// MLE warmup then policy-gradient fine-tuning; writes a metrics CSV.
    Train(Common),
    /// Gradient variance per estimator at frozen parameters; writes a CSV.
    Variance(Common),
    /// Unbiasedness, fast/naive, finite-difference and normalization suites;
    /// writes a JSON report and exits 1 if any suite fails.
    OracleCheck(Common),
    /// Cluster an embedding file into a codebook JSON.
    TreeBuild(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
}

enum Failure {
    Check,
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Error> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(Error::from),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load(common: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.output = Some(o.clone());
    }
    if let Some(w) = common.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Train(c) => {
            let cfg = load(&c)?;
            let summary = run_train(&cfg)?;
            emit(cfg.output.as_deref(), &metrics_csv(&cfg, &summary))?;
            if let Some(p) = &cfg.checkpoint {
                std::fs::write(p, summary.params.to_checkpoint_json()?).map_err(Error::from)?;
            }
            eprintln!("pre-RL mean reward {}", summary.pre_rl_mean_reward);
        }
        Command::Variance(c) => {
            let cfg = load(&c)?;
            emit(cfg.output.as_deref(), &variance_csv(&run_variance(&cfg)?))?;
        }
        Command::OracleCheck(c) => {
            let cfg = load(&c)?;
            let report = run_oracle_check(&cfg)?;
            emit(cfg.output.as_deref(), &report.to_json()?)?;
            for s in report.suites.iter().filter(|s| !s.pass) {
                eprintln!("FAIL {}: statistic {} bound {}", s.suite, s.statistic, s.bound);
            }
            if !report.pass {
                return Err(Failure::Check);
            }
        }
        Command::TreeBuild(c) => {
            let mut cfg = TreeBuildConfig::load(&c.config)?;
            if let Some(s) = c.seed {
                cfg.seed = s;
            }
            if let Some(o) = c.out {
                cfg.output = Some(o);
            }
            let codebook = run_tree_build(&cfg)?;
            emit(cfg.output.as_deref(), &codebook.to_json()?)?;
            eprintln!("depth {} mean path length {}", codebook.depth(), codebook.mean_path_length());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check) => ExitCode::from(1),
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            match e {
                Error::Config { .. } | Error::Parse { .. } | Error::Budget(..) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
