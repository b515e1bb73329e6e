use std::process::ExitCode;

use clap::Parser;

use alo_tune::cli::{self, Cli, EXIT_OK, EXIT_USAGE};

fn main() -> ExitCode {
    let args = match Cli::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_OK });
        }
    };
    match cli::execute(args) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(cli::exit_code_for(&err))
        }
    }
}
