use std::process::ExitCode;

fn main() -> ExitCode {
    rda_core::cli::main()
}
