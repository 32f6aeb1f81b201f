//! Binary entry point; all logic lives in the library crate.

use std::process::ExitCode;

fn main() -> ExitCode {
    aec_cli::run()
}
