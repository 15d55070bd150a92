use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use suspension_core::exec::init_threads;
use suspension_core::ExecMode;
use suspension_harness::experiments;
use suspension_harness::{HarnessError, Mode, RunConfig};

#[derive(Parser)]
#[command(name = "suspension", about = "Brownian suspension experiments", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// JSON run configuration; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output root; runs are written to `<out>/<run-id>/`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Run single-threaded.
    #[arg(long)]
    sequential: bool,
}

#[derive(Subcommand)]
enum Command {
    Simulate(RunArgs),
    FokkerPlanck(RunArgs),
    Verify(RunArgs),
    SweepDe1(RunArgs),
    SweepSmallDe(RunArgs),
    CompareFields(RunArgs),
    KernelsSelftest(RunArgs),
}

fn execute(mode: Mode, args: RunArgs) -> Result<(), HarnessError> {
    let mut config = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    config.mode = mode;
    if let Some(s) = args.seed {
        config.seed = s;
    }
    let out = args.out.clone().unwrap_or_else(|| config.output_dir.clone());
    init_threads(args.threads);
    let exec = if args.sequential { ExecMode::Sequential } else { ExecMode::Parallel };
    let outcome = experiments::run(&config, &out, exec)?;
    println!("{}", outcome.dir.display());
    println!("{}", serde_json::to_string_pretty(&outcome.report)?);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (mode, args) = match cli.command {
        Command::Simulate(a) => (Mode::Simulate, a),
        Command::FokkerPlanck(a) => (Mode::FokkerPlanck, a),
        Command::Verify(a) => (Mode::VerifyIdentities, a),
        Command::SweepDe1(a) => (Mode::SweepDe1, a),
        Command::SweepSmallDe(a) => (Mode::SweepSmallDe, a),
        Command::CompareFields(a) => (Mode::CompareFields, a),
        Command::KernelsSelftest(a) => (Mode::KernelsSelftest, a),
    };
    match execute(mode, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
