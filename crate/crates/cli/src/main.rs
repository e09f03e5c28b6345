use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use svi_torus::verify::RateParameter;
use svi_torus_cli::commands::{self, Experiment, Overrides};
use svi_torus_cli::CliError;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

/// Stochastic p-Laplace / TV flow with transport noise on the torus.
#[derive(Parser)]
#[command(name = "svi-torus", version)]
struct Cli {
    /// Output directory (overrides `output.dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Simulate even when (E), (D) or (R) fails.
    #[arg(long, global = true)]
    force: bool,
    /// Master seed (overrides `solver.seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the structural conditions on the coefficients.
    Check { config: PathBuf },
    /// Run the Monte-Carlo ensemble and write per-time statistics.
    Simulate { config: PathBuf },
    /// Run the named reports (default: `verify.inequalities`).
    Verify { config: PathBuf, names: Vec<String> },
    /// Coupled convergence-rate study in lambda, delta or epsilon.
    RateStudy {
        config: PathBuf,
        parameter: Option<String>,
        values: Vec<f64>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let ov = Overrides {
        out: cli.out,
        force: cli.force,
        seed: cli.seed,
    };
    match cli.command {
        Command::Check { config } => commands::check(&Experiment::load(&config, &ov)?).map(drop),
        Command::Simulate { config } => commands::simulate(&Experiment::load(&config, &ov)?).map(drop),
        Command::Verify { config, names } => {
            for n in &names {
                commands::Inequality::from_name(n)?;
            }
            commands::verify(&Experiment::load(&config, &ov)?, &names).map(drop)
        }
        Command::RateStudy {
            config,
            parameter,
            values,
        } => {
            let parameter = parameter
                .map(|p| p.parse::<RateParameter>())
                .transpose()
                .map_err(|e| CliError::Usage(e.to_string()))?;
            commands::rate(&Experiment::load(&config, &ov)?, parameter, &values).map(drop)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("svi-torus: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
