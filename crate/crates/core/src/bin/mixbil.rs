use std::process::ExitCode;

fn main() -> ExitCode {
    mixbil::cli::main_with_args(std::env::args_os())
}
