mod compare;
mod estimate;
mod inputs;
mod manifest;
mod precision;
mod simulate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dbexp_core::DbError;

/// Design-based estimation, variance bounds and simulation for randomized experiments.
#[derive(Debug, Clone, Parser)]
#[command(name = "dbexp", version, about)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Seed for anything random. Overrides the seed in a simulation config.
    #[arg(long, global = true, env = "DBEXP_SEED")]
    pub seed: Option<u64>,

    /// Normal quantile for reported intervals.
    #[arg(long, global = true, env = "DBEXP_Z", default_value_t = 1.96)]
    pub z: f64,

    /// Where reports and the run manifest are written.
    #[arg(long, global = true, env = "DBEXP_OUT_DIR", default_value = "dbexp-out")]
    pub out_dir: PathBuf,

    /// Worker threads for parallel sections (defaults to all cores).
    #[arg(long, global = true, env = "DBEXP_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Point estimates and bound-based intervals from one experiment.
    Estimate(estimate::EstimateArgs),
    /// The cluster-randomized Monte-Carlo study.
    Simulate(simulate::SimulateArgs),
    /// Compare variance bounds for a design.
    BoundsCompare(compare::CompareArgs),
    /// Test whether a fixed coefficient improved precision.
    PrecisionTest(precision::PrecisionArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Estimate(_) => "estimate",
            Command::Simulate(_) => "simulate",
            Command::BoundsCompare(_) => "bounds-compare",
            Command::PrecisionTest(_) => "precision-test",
            Command::Replay(_) => "replay",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    /// A manifest.json written by an earlier run.
    pub manifest: PathBuf,
}

/// Exit status contract.
pub mod exit {
    pub const OK: u8 = 0;
    pub const OTHER: u8 = 1;
    pub const INPUT: u8 = 2;
    pub const UNIDENTIFIED: u8 = 3;
    pub const NOT_CONVERGED: u8 = 4;
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<DbError>() {
            return match e {
                DbError::Unidentified { .. } => exit::UNIDENTIFIED,
                DbError::NotConverged { .. } => exit::NOT_CONVERGED,
                DbError::NotPsd { .. } | DbError::InvalidBound(_) => exit::OTHER,
                _ => exit::INPUT,
            };
        }
        if cause.is::<std::io::Error>() || cause.is::<csv::Error>() || cause.is::<serde_json::Error>() {
            return exit::INPUT;
        }
    }
    exit::OTHER
}

pub fn run(cli: Cli, argv: Vec<String>) -> anyhow::Result<()> {
    if let Some(t) = cli.global.threads {
        // Fails only if a pool already exists, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build_global();
    }
    if let Command::Replay(a) = &cli.command {
        let (replayed, argv) = manifest::replay_cli(&a.manifest, &cli.global)?;
        return run(replayed, argv);
    }
    std::fs::create_dir_all(&cli.global.out_dir)?;
    let mut record = manifest::Manifest::new(&cli, argv)?;
    let result = match &cli.command {
        Command::Estimate(a) => estimate::execute(&cli, a, &mut record),
        Command::Simulate(a) => simulate::execute(&cli, a, &mut record),
        Command::BoundsCompare(a) => compare::execute(&cli, a, &mut record),
        Command::PrecisionTest(a) => precision::execute(&cli, a, &mut record),
        Command::Replay(_) => unreachable!("handled above"),
    };
    record.finish(result.as_ref().err().map(|e| (format!("{e:#}"), exit_code(e))));
    let written = record.write(&cli.global.out_dir);
    result?;
    written
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::INPUT } else { exit::OK });
        }
    };
    match run(cli, argv) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
