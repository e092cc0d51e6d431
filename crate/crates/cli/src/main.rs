//! Command-line front end for differential positivity analysis.
//!
//! Exit codes: 0 ok, 2 config error, 3 numeric stage failure,
//! 4 verdict-negative (for example, an obstruction found when certifying).

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{CmdError, Outcome};

#[derive(Parser)]
#[command(
    name = "diffpos",
    about = "Numerical differential-positivity analysis of smooth ODE systems",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Path to the JSON analysis configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for report.json and CSV tables.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Override the config RNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Rayon worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Integrate a trajectory and write it as CSV.
    Simulate,
    /// Locate fixed points in the region with their spectra.
    FixedPoints,
    /// Locate a limit cycle and its Floquet multipliers.
    LimitCycle,
    /// Verify normal hyperbolicity of the detected attractor.
    NhCheck,
    /// Check differential positivity of a cone field by sampling.
    CheckDp,
    /// Estimate the Perron-Frobenius vector field at sampled points.
    PfField,
    /// Fit the Hilbert-metric contraction rate along one trajectory.
    Rate,
    /// Classify the asymptotic behavior from an initial point.
    Classify,
    /// Construct and verify a certifying cone field over the basin.
    Certify,
    /// Test the saddle obstruction to projective contraction.
    Obstruction,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(3);
        }
    }
    let Some(config_path) = &cli.config else {
        eprintln!("error: --config PATH is required");
        return ExitCode::from(2);
    };
    let loaded = match config::load_config(config_path) {
        Ok(l) => l,
        Err(msg) => {
            eprintln!("config error: {msg}");
            return ExitCode::from(2);
        }
    };
    let seed = cli.seed.unwrap_or(loaded.config.seed);
    let run = match cli.command {
        Command::Simulate => commands::simulate(&loaded, &cli.out, seed),
        Command::FixedPoints => commands::fixed_points(&loaded, &cli.out, seed),
        Command::LimitCycle => commands::limit_cycle(&loaded, &cli.out, seed),
        Command::NhCheck => commands::nh_check(&loaded, &cli.out, seed),
        Command::CheckDp => commands::check_dp(&loaded, &cli.out, seed),
        Command::PfField => commands::pf_field(&loaded, &cli.out, seed),
        Command::Rate => commands::rate(&loaded, &cli.out, seed),
        Command::Classify => commands::classify(&loaded, &cli.out, seed),
        Command::Certify => commands::certify(&loaded, &cli.out, seed),
        Command::Obstruction => commands::obstruction(&loaded, &cli.out, seed),
    };
    match run {
        Ok(outcome) => {
            let code = outcome.exit_code();
            match outcome {
                Outcome::Ok => println!("status: ok"),
                Outcome::VerdictNegative => println!("status: verdict-negative"),
            }
            ExitCode::from(code as u8)
        }
        Err(CmdError::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(CmdError::Numeric(msg)) => {
            eprintln!("numeric failure: {msg}");
            ExitCode::from(3)
        }
        Err(CmdError::Io(msg)) => {
            eprintln!("io error: {msg}");
            ExitCode::from(3)
        }
    }
}
