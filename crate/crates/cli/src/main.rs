use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "panelbounds", version, about = "Bounds on the distribution of treatment effects from three-period panels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the configured master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate bounds, confidence bands and the pre-test for one dataset.
    Analyze(Common),
    /// Repeat estimation over seeded synthetic draws and summarize.
    Montecarlo(Common),
    /// Write a synthetic panel and its oracle.
    Simulate(Common),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (run, args): (fn(&std::path::Path, &std::path::Path, Option<u64>) -> _, Common) = match cli.command {
        Command::Analyze(a) => (panelbounds_cli::analyze, a),
        Command::Montecarlo(a) => (panelbounds_cli::montecarlo, a),
        Command::Simulate(a) => (panelbounds_cli::simulate, a),
    };
    if let Some(t) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&args.config, &args.out, args.seed) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
