use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = mcst::cli::Cli::parse();
    match mcst::cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mcst: error: {e}");
            ExitCode::FAILURE
        }
    }
}
