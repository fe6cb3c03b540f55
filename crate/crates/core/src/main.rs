use std::process::ExitCode;

fn main() -> ExitCode {
    cd3a::cli::main_with_args(std::env::args_os())
}
