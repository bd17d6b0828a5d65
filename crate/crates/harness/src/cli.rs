//! Command-line entry point shared by the `tightwave` binary and tests.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, ValueEnum};

use crate::config::Command;
use crate::{execute, load_config, Overrides};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    Iterate,
    Validate,
    Lyapunov,
    Simulate,
    Compare,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Command {
        match c {
            Cmd::Iterate => Command::Iterate,
            Cmd::Validate => Command::Validate,
            Cmd::Lyapunov => Command::Lyapunov,
            Cmd::Simulate => Command::Simulate,
            Cmd::Compare => Command::Compare,
        }
    }
}

/// Max-type distributional recursions: engine, validators and Monte Carlo.
///
/// Exit codes: 0 success, 1 validation failure, 2 numeric error,
/// 3 configuration error, 4 I/O error.
#[derive(Debug, Parser)]
#[command(name = "tightwave", version)]
struct Cli {
    /// What to run; overrides the config's `command`.
    command: Cmd,
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed for Monte Carlo runs.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
}

/// Parse `args` (including the program name), run, and return the exit code.
pub fn run_cli<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // Help and version requests are not errors; bad usage is a config error.
            return if e.use_stderr() { 3 } else { 0 };
        }
    };
    let mut cfg = match load_config(&cli.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return if matches!(e, tightwave_core::Error::Io(_)) { 4 } else { 3 };
        }
    };
    let overrides = Overrides {
        command: Some(cli.command.into()),
        out: cli.out,
        seed: cli.seed,
        reps: cli.reps,
        iterations: cli.iterations,
    };
    if let Err(e) = cfg.apply(&overrides) {
        eprintln!("error: {e}");
        return 3;
    }
    let (code, manifest, err) = execute(&cfg);
    if let Some(e) = err {
        eprintln!("error: {e}");
    }
    if let Some(m) = manifest {
        println!("{} {}: {}", m.command, m.status, cfg.outputs.directory.join(crate::artifact::MANIFEST).display());
        println!("{}", serde_json::to_string(&m.metrics).unwrap_or_default());
    }
    code as u8
}
