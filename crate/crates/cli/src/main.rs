use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = vesselmf_cli::cli::Cli::parse();
    match vesselmf_cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
