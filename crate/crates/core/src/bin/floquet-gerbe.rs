use std::process::ExitCode;

use clap::Parser;
use floquet_gerbe::cli::{run, Cli};

fn main() -> ExitCode {
    ExitCode::from(run(Cli::parse()))
}
