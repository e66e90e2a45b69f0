use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use petc_lab::commands::{self, Invocation};

#[derive(Parser)]
#[command(name = "petc-lab", version, about = "Certify, simulate and verify periodic event-triggered control loops")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory (overrides output.dir).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Channel seed (overrides channel.seed).
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Print nothing on success.
    #[arg(long)]
    quiet: bool,
}

impl Common {
    fn invocation(&self) -> Invocation {
        Invocation { config: self.config.clone(), out: self.out.clone(), seed: self.seed }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Estimate constants and the admissible sampling period.
    Certify(Common),
    /// Run the closed loop and write the trajectory log.
    Simulate(Common),
    /// Check a trajectory log against the stability guarantees.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Log to check (defaults to verify.log, then the simulate output).
        #[arg(long, value_name = "PATH")]
        log: Option<PathBuf>,
    },
    /// Event-triggered run against the periodic baseline on the same channel.
    Compare(Common),
    /// Cartesian parameter sweep with per-cell verification.
    Sweep(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let common = match &cli.command {
        Command::Certify(c) | Command::Simulate(c) | Command::Compare(c) | Command::Sweep(c) => c,
        Command::Verify { common, .. } => common,
    };
    let default_level = if common.quiet { "error" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(default_level)).init();

    let inv = common.invocation();
    let result = match &cli.command {
        Command::Certify(_) => commands::cmd_certify(&inv),
        Command::Simulate(_) => commands::cmd_simulate(&inv),
        Command::Verify { log, .. } => commands::cmd_verify(&inv, log.as_deref()),
        Command::Compare(_) => commands::cmd_compare(&inv),
        Command::Sweep(_) => commands::cmd_sweep(&inv),
    };
    match result {
        Ok(outcome) => {
            if !common.quiet || outcome.exit_code != 0 {
                print!("{}", outcome.summary);
            }
            ExitCode::from(outcome.exit_code as u8)
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(commands::exit_code_for(&err) as u8)
        }
    }
}
