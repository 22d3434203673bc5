use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use surrovv_core::harness::{exit_code, run_path, ExperimentKind, Overrides};
use surrovv_core::{par, Error};

#[derive(Debug, Parser)]
#[command(name = "surrovv", version, about = "Seeded experiments for surrogate component-model verification and validation")]
struct Cli {
    #[command(subcommand)]
    experiment: Command,
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    /// TOML experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: the config's `out`, else out/<experiment>).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Calibrated interface perturbation on the single-machine benchmark.
    SmibDemo(RunArgs),
    /// Perturbation runs over a list of line reactances.
    XlineSweep(RunArgs),
    /// Trains the physics-informed surrogate.
    Train(RunArgs),
    /// Worst-case discrepancy search, all methods under one budget.
    Verify(RunArgs),
    /// Worst-case search in nested boxes around the nominal point.
    BoxShrink(RunArgs),
    /// Novelty against naive trajectory sampling.
    Novelty(RunArgs),
    /// Conformal calibration of an interface channel.
    Calibrate(RunArgs),
    /// Interface-error bound constants and budget.
    BoundReport(RunArgs),
}

impl Command {
    fn split(self) -> (ExperimentKind, RunArgs) {
        match self {
            Command::SmibDemo(a) => (ExperimentKind::SmibDemo, a),
            Command::XlineSweep(a) => (ExperimentKind::XlineSweep, a),
            Command::Train(a) => (ExperimentKind::Train, a),
            Command::Verify(a) => (ExperimentKind::Verify, a),
            Command::BoxShrink(a) => (ExperimentKind::BoxShrink, a),
            Command::Novelty(a) => (ExperimentKind::Novelty, a),
            Command::Calibrate(a) => (ExperimentKind::Calibrate, a),
            Command::BoundReport(a) => (ExperimentKind::BoundReport, a),
        }
    }
}

fn init_threads() -> Result<(), Error> {
    let Ok(v) = std::env::var("SURROVV_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().map_err(|_| Error::Config(format!("SURROVV_THREADS must be a positive integer, got {v:?}")))?;
    if n == 0 {
        return Err(Error::Config("SURROVV_THREADS must be at least 1".into()));
    }
    par::init_threads(n);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = cli.experiment.split();
    let result = init_threads().and_then(|_| {
        run_path(&args.config, Overrides { experiment: Some(kind), seed: args.seed, out: args.out, base_dir: None })
    });
    match result {
        Ok(out) => {
            eprintln!("{}: wrote {} files to {}", kind.name(), out.files.len(), out.out_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
