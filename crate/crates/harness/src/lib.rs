//! Configuration, dispatch and artifact persistence for `tightwave` runs.
//!
//! A run reads one JSON [`config::RunConfig`], dispatches to the engine,
//! the validators or the simulators, and writes its tables followed by a
//! manifest into the output directory.

pub mod artifact;
pub mod cli;
pub mod config;
pub mod run;

use std::time::Instant;

pub use artifact::{write_artifact, Manifest};
pub use config::{load_config, parse_config, Command, Overrides, RunConfig};
pub use run::{exit_code_for, run, RunOutput, Status};

/// Run a configuration and persist its artifact, returning the exit code.
pub fn execute(cfg: &RunConfig) -> (i32, Option<Manifest>, Option<tightwave_core::Error>) {
    let start = Instant::now();
    let out = match run(cfg) {
        Ok(out) => out,
        Err(e) => return (exit_code_for(&e), None, Some(e)),
    };
    match write_artifact(cfg, &out, start.elapsed().as_secs_f64()) {
        Ok(m) => (out.status.exit_code(), Some(m), None),
        Err(e) => (4, None, Some(e)),
    }
}
