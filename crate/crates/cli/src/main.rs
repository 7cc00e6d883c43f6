use std::process::ExitCode;

fn main() -> ExitCode {
    moder_cli::run(std::env::args_os())
}
