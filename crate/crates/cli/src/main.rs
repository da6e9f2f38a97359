use std::process::ExitCode;

fn main() -> ExitCode {
    mhmm_cli::run(std::env::args())
}
