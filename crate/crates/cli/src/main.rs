use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(softsense::cli::run(std::env::args_os()))
}
