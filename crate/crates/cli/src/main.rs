use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use singular_heat_cli::{exit, exit_code_for, run_and_write, RunConfig};

#[derive(Parser)]
#[command(name = "singular-heat", version, about = "Heat equation with an inverse-square potential: experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Configuration file (`key = value` lines); defaults apply without it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random quantity.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for CSV files and summary.txt.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// `key=value` override, repeatable (e.g. `--override mu=0.1`).
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Write wall times into CSV columns (reruns are then not byte-identical).
    #[arg(long, global = true)]
    timing: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Discrete Hardy constant and improved-Hardy K0 across refinements.
    Hardy,
    /// Regularized spectral sweep (blow-up of the bottom eigenvalue).
    Spectrum,
    /// Forward/adjoint solves with monotonicity and duality checks.
    Solve,
    /// Weight validation, derivative check and Carleman ratios.
    Carleman,
    /// HUM null controls and Gram operator checks.
    Hum,
    /// Cutoff stabilizer with the origin inside omega.
    Stabilize,
    /// Every subcommand in sequence.
    All,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Hardy => "hardy",
            Command::Spectrum => "spectrum",
            Command::Solve => "solve",
            Command::Carleman => "carleman",
            Command::Hum => "hum",
            Command::Stabilize => "stabilize",
            Command::All => "all",
        }
    }
}

fn load(cli: &Cli) -> Result<RunConfig, singular_heat_cli::ConfigError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for o in &cli.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    cfg.timing |= cli.timing;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match load(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(exit::CONFIG_ERROR as u8);
        }
    };
    let command = cli.command.name();
    let code = match run_and_write(command, &cfg, &cfg.output_dir) {
        Ok(outcomes) => {
            for o in &outcomes {
                for c in &o.checks {
                    println!("{}/{}", o.command, c.line());
                }
                for c in &o.diagnostics {
                    println!("{}/(diagnostic) {}", o.command, c.line());
                }
            }
            if outcomes.iter().all(|o| o.passed()) {
                exit::PASS
            } else {
                exit::INVARIANT_FAILURE
            }
        }
        Err((e, _)) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    };
    println!("reports written to {}", cfg.output_dir.display());
    ExitCode::from(code as u8)
}
