use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(tightwave::cli::run_cli(std::env::args_os()))
}
