use std::process::ExitCode;

fn main() -> ExitCode {
    ddtmpc::cli::run_cli(std::env::args_os())
}
