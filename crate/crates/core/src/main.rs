use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use muskat::io;

/// One-phase Muskat simulator with a permeability jump.
#[derive(Parser)]
#[command(name = "muskat", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation described by a JSON config.
    Run { config: PathBuf },
    /// Print the linear decay rate sigma(k) for k = 1..k_max.
    #[command(allow_negative_numbers = true)]
    Dispersion {
        beta_plus: f64,
        beta_minus: f64,
        k_max: usize,
    },
    /// Run the invariant checks for a config.
    Check { config: PathBuf },
    /// Estimate observed spatial and temporal orders.
    Convergence { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { io::EXIT_USAGE } else { io::EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    io::init_threads();
    let code = match cli.command {
        Command::Run { config } => io::cmd_run(&config),
        Command::Dispersion {
            beta_plus,
            beta_minus,
            k_max,
        } => io::cmd_dispersion(beta_plus, beta_minus, k_max),
        Command::Check { config } => io::cmd_check(&config),
        Command::Convergence { config } => io::cmd_convergence(&config),
    };
    ExitCode::from(code as u8)
}
