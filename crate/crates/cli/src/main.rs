mod pipeline;
mod spec;
mod suite;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pipeline::{exit, exit_code};
use spec::Pipeline;

#[derive(Parser)]
#[command(
    name = "branchtail",
    version,
    about = "Small-value tails of branching-process limits"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    global: Global,
}

#[derive(Args, Clone)]
struct Global {
    /// Override the spec's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the spec's replicate count.
    #[arg(long, global = true)]
    replicates: Option<usize>,
    /// Directory for artifacts.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads for replicate loops; never changes the output.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline named in the spec file.
    Run { spec: PathBuf },
    /// Classify the regime and write regime.txt.
    Classify { spec: PathBuf },
    /// Monte Carlo tail estimate and rate fit.
    Tail { spec: PathBuf },
    /// Laplace-transform curve and rate fit.
    Laplace { spec: PathBuf },
    /// Run every check the spec declares.
    Verify { spec: PathBuf },
    /// Write raw limit samples to samples.txt.
    Sample { spec: PathBuf },
    /// Run every `*.spec` file in a directory and write summary.txt.
    VerifyAll { dir: PathBuf },
}

fn run_one(path: &Path, global: &Global, pipeline: Option<Pipeline>) -> anyhow::Result<u8> {
    let mut spec = spec::load(path, global.seed, global.replicates)?;
    if let Some(p) = pipeline {
        spec.pipeline = p;
        spec.validate()?;
    }
    let outcome = pipeline::run(&spec, &global.out_dir)?;
    print!("{}", outcome.regime.to_kv());
    for c in &outcome.checks {
        println!(
            "{}: observed {} predicted {} tolerance {} {}",
            c.check,
            c.observed,
            c.predicted,
            c.tolerance,
            if c.pass { "PASS" } else { "FAIL" }
        );
    }
    Ok(if outcome.passed() {
        exit::OK
    } else {
        exit::CHECK_FAILED
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let global = cli.global.clone();
    let result = branchtail::parallel::with_threads(global.threads, move || match &cli.command {
        Command::Run { spec } => run_one(spec, &global, None),
        Command::Classify { spec } => run_one(spec, &global, Some(Pipeline::Classify)),
        Command::Tail { spec } => run_one(spec, &global, Some(Pipeline::Tail)),
        Command::Laplace { spec } => run_one(spec, &global, Some(Pipeline::Laplace)),
        Command::Verify { spec } => run_one(spec, &global, Some(Pipeline::Verify)),
        Command::Sample { spec } => {
            let spec = spec::load(spec, global.seed, global.replicates)?;
            pipeline::dump_samples(&spec, &global.out_dir)?;
            Ok(exit::OK)
        }
        Command::VerifyAll { dir } => {
            suite::verify_all(dir, &global.out_dir, global.seed, global.replicates)
        }
    });
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
