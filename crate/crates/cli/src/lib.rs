//! Experiment driver: configuration parsing and one runner per subcommand.

pub mod config;
pub mod experiments;

use std::path::Path;

pub use config::{ConfigError, RunConfig};
pub use experiments::{Check, Outcome, RunError};

/// Process exit codes.
pub mod exit {
    pub const PASS: i32 = 0;
    pub const INVARIANT_FAILURE: i32 = 1;
    pub const CONFIG_ERROR: i32 = 2;
    pub const SOLVER_FAILURE: i32 = 3;
}

/// Exit code for a module error: precondition violations on configured
/// inputs count as configuration errors, everything else as solver failures.
pub fn exit_code_for(err: &RunError) -> i32 {
    use singular_heat::Error::*;
    match err.source {
        InvalidGrid(_) | SeparationViolation(_) | EmptyRegion(_) | NonPositiveCoefficient { .. } | MuOutOfRange { .. }
        | InvalidArgument(_) | ResolutionGuard { .. } | OriginOutsideOmega | ValidationFailure { .. } => {
            exit::CONFIG_ERROR
        }
        _ => exit::SOLVER_FAILURE,
    }
}

/// Runs one subcommand (or `all`) and writes its reports under `out_dir`.
/// `all` writes each subcommand into its own subdirectory. Returns the
/// outcomes in run order.
pub fn run_and_write(command: &str, cfg: &RunConfig, out_dir: &Path) -> Result<Vec<Outcome>, (RunError, Vec<Outcome>)> {
    let names: Vec<&str> = if command == "all" {
        experiments::SUBCOMMANDS.to_vec()
    } else {
        vec![command]
    };
    let mut done = Vec::new();
    for name in names {
        let outcome = match experiments::run_named(name, cfg) {
            Ok(o) => o,
            Err(e) => return Err((e, done)),
        };
        let dir = if command == "all" { out_dir.join(name) } else { out_dir.to_path_buf() };
        if let Err(e) = outcome.write(&dir, cfg) {
            let err = RunError {
                command: outcome.command,
                source: singular_heat::Error::Io(e.to_string()),
            };
            return Err((err, done));
        }
        done.push(outcome);
    }
    if command == "all" {
        let mut text = String::new();
        for o in &done {
            for c in &o.checks {
                text.push_str(&format!("{}/{}\n", o.command, c.line()));
            }
        }
        std::fs::write(out_dir.join("summary.txt"), text).map_err(|e| {
            (
                RunError {
                    command: "all",
                    source: singular_heat::Error::Io(e.to_string()),
                },
                Vec::new(),
            )
        })?;
    }
    Ok(done)
}
