//! `mmrescore` command-line entry point.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical abort.

mod commands;
mod config;

use std::io::Write;
use std::process::ExitCode;

use commands::CliError;
use config::Settings;

fn run(args: Vec<String>) -> Result<String, CliError> {
    let matches = match config::command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                return Ok(e.to_string());
            }
            let _ = e.print();
            return Err(CliError::Usage(String::new()));
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let s = Settings::resolve(name, sub)?;
    match name {
        "gen-data" => commands::gen_data(&s),
        "train-kmeans" => commands::train_kmeans_cmd(&s),
        "quantize" => commands::quantize(&s),
        "train-lm" => commands::train_lm(&s),
        "adapt-lm" => commands::adapt_lm(&s),
        "rescore" => commands::rescore(&s),
        "tune-lambda" => commands::tune_lambda_cmd(&s),
        "train-mwer" => commands::train_mwer_cmd(&s),
        "eval" => commands::eval(&s),
        "report" => commands::report(&s),
        _ => unreachable!("clap rejects unknown subcommands"),
    }
}

fn main() -> ExitCode {
    match run(std::env::args().collect()) {
        Ok(out) => {
            let mut stdout = std::io::stdout().lock();
            if stdout.write_all(out.as_bytes()).and_then(|_| stdout.flush()).is_err() {
                return ExitCode::from(2);
            }
            ExitCode::SUCCESS
        }
        Err(CliError::Usage(msg)) => {
            if !msg.is_empty() {
                eprintln!("mmrescore: {msg}");
            }
            ExitCode::from(1)
        }
        Err(CliError::Core(e)) => {
            eprintln!("mmrescore: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}
