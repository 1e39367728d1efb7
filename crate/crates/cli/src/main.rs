use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gkernel_cli::commands::run_file;
use gkernel_cli::{Command, Overrides, EXIT_CONFIG};

#[derive(Parser)]
#[command(name = "gkernel", version, about = "Long-term decomposition of pricing kernels under volatility uncertainty")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Check the model assumptions on the grid (exit 2 when a clause fails).
    Check(RunArgs),
    /// Solve the ergodic equation for (u, λ).
    Solve(RunArgs),
    /// Solve, simulate and verify the long-term decomposition.
    Decompose(RunArgs),
    /// Monte Carlo upper price of the configured payoff.
    Price(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides output.dir).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    paths: Option<usize>,
    /// Ergodic Cauchy tolerance (overrides solver.tol).
    #[arg(long)]
    tol: Option<f64>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let (cmd, args) = match cli.command {
        Sub::Check(a) => (Command::Check, a),
        Sub::Solve(a) => (Command::Solve, a),
        Sub::Decompose(a) => (Command::Decompose, a),
        Sub::Price(a) => (Command::Price, a),
    };
    let overrides = Overrides { out: args.out, seed: args.seed, paths: args.paths, tol: args.tol };
    match run_file(cmd, &args.config, &overrides) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
