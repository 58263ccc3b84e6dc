use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mfrlqr::linalg::Discretization;

mod commands;
mod output;

/// Risk-constrained LQR for mean-field multi-agent systems.
#[derive(Parser)]
#[command(name = "mfrlqr", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the standing assumptions for a scenario.
    Validate {
        scenario: PathBuf,
        #[command(flatten)]
        disc: DiscArgs,
    },
    /// Run dual ascent; writes trace.csv, gains.json and summary.json.
    Solve {
        scenario: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[command(flatten)]
        disc: DiscArgs,
    },
    /// Roll out the n-player system; writes trajectory.csv and summary.json.
    ///
    /// Without --gains or --risk-neutral both the solved and the
    /// risk-neutral policy are simulated on the same seeds.
    Simulate {
        scenario: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Policy file written by `solve`.
        #[arg(long, conflicts_with = "risk_neutral")]
        gains: Option<PathBuf>,
        #[arg(long)]
        risk_neutral: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        seeds: Option<usize>,
        #[command(flatten)]
        disc: DiscArgs,
    },
    /// Evaluate the dual function on a grid; writes dual.csv and summary.json.
    Sweep {
        scenario: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Grid as a:b:steps; defaults to the scenario's own grid.
        #[arg(long)]
        lambda_grid: Option<String>,
        #[command(flatten)]
        disc: DiscArgs,
    },
    /// Write the bundled scenario files.
    Generate {
        /// Scenario name, or `all`.
        #[arg(default_value = "all")]
        name: String,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

#[derive(Args, Clone, Copy)]
struct DiscArgs {
    /// Override the discretization step of continuous-time scenarios.
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    discretization: Option<Discretization>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MFRLQR_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { scenario, disc } => commands::validate(&scenario, disc.dt, disc.discretization),
        Command::Solve { scenario, out, disc } => commands::solve(&scenario, &out, disc.dt, disc.discretization),
        Command::Simulate {
            scenario,
            out,
            gains,
            risk_neutral,
            seed,
            seeds,
            disc,
        } => {
            let choice = match (gains, risk_neutral) {
                (Some(path), _) => commands::PolicyChoice::File(path),
                (None, true) => commands::PolicyChoice::RiskNeutral,
                (None, false) => commands::PolicyChoice::Both,
            };
            commands::simulate(&scenario, &out, choice, seed, seeds, disc.dt, disc.discretization)
        }
        Command::Sweep {
            scenario,
            out,
            lambda_grid,
            disc,
        } => commands::sweep(&scenario, &out, lambda_grid.as_deref(), disc.dt, disc.discretization),
        Command::Generate { name, out } => commands::generate(&name, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
