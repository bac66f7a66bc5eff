use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Instant, SystemTime};

use clap::{Parser, Subcommand};
use dampwave::LabError;

mod config;
mod run;
mod selftest;

/// Damped wave laboratory.
#[derive(Parser)]
#[command(name = "lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run { config: PathBuf },
    /// Parse and validate a config file without running it.
    Validate { config: PathBuf },
    /// List the builtin media.
    ListMedia,
    /// Run the built-in oracle checks.
    Selftest,
}

const INPUT_ERROR: u8 = 2;
const CHECK_FAILED: u8 = 1;

fn status(e: &LabError) -> u8 {
    match e {
        LabError::Input(_) | LabError::Cfl { .. } => INPUT_ERROR,
        _ => CHECK_FAILED,
    }
}

fn fail(e: LabError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(status(&e))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config } => {
            let started = SystemTime::now();
            let clock = Instant::now();
            let plan = match config::load(&config).and_then(config::validate) {
                Ok(p) => p,
                Err(e) => return fail(e),
            };
            let outcome = match run::execute(&plan) {
                Ok(o) => o,
                Err(e) => return fail(e),
            };
            let files = match run::emit(&plan, &config, &outcome, started, clock) {
                Ok(f) => f,
                Err(e) => return fail(e),
            };
            println!("{} {} -> {}", plan.config.kind, if outcome.passed { "passed" } else { "FAILED" }, plan.output_dir.display());
            for (k, v) in &outcome.summary {
                println!("  {k} = {v}");
            }
            println!("  files: {}", files.join(", "));
            if outcome.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(CHECK_FAILED)
            }
        }
        Command::Validate { config } => match config::load(&config).and_then(config::validate) {
            Ok(p) => {
                println!(
                    "ok: {} on {} (d = {}, N = {}, {} unknowns) -> {}",
                    p.config.kind,
                    p.medium.name,
                    p.grid.dim,
                    p.grid.n,
                    p.grid.len(),
                    p.output_dir.display()
                );
                ExitCode::SUCCESS
            }
            Err(e) => fail(e),
        },
        Command::ListMedia => {
            for (name, what) in [
                ("free", "G = I, a = 0"),
                ("damped-free", "G = I, a = c0 <x>^(-1-rho); parameters c0, rho (default 1, 1)"),
                ("bump-metric", "G = (1 + eps b(|x|/radius)) I, a = 0; parameters eps, radius (default 0.3, 2)"),
                ("trapping-well", "radial well with a stable circular ray, damping over the well"),
                ("trapping-well-displaced", "same well, damping moved to an outer annulus"),
            ] {
                println!("{name:<24} {what}");
            }
            println!("{:<24} radial piecewise-polynomial metric and absorption via [medium.profile]", "custom");
            ExitCode::SUCCESS
        }
        Command::Selftest => {
            if selftest::run() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(CHECK_FAILED)
            }
        }
    }
}
