use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(rescomp::cli::entry())
}
