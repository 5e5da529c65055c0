use std::process::ExitCode;

fn main() -> ExitCode {
    uavmec::cli::main_with_args(std::env::args_os())
}
