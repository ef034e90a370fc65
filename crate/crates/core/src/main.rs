use std::process::ExitCode;

use gatebench::cli::{run_cli, CliError};

fn main() -> ExitCode {
    match run_cli(std::env::args_os()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Failed { code, message }) if code == "display" => {
            print!("{message}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.record());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
