use std::process::ExitCode;

use clap::Parser;

use mono3d_cli::error::EXIT_INPUT;
use mono3d_cli::fsio::to_sorted_json;
use mono3d_cli::{run_with_threads, thread_count, Cli, CliError, RunConfig, THREADS_ENV};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(EXIT_INPUT as u8);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    let result = std::env::var(THREADS_ENV)
        .ok()
        .map_or(Ok(None), |v| thread_count(Some(&v)))
        .and_then(|threads| {
            let cfg = RunConfig::from_cli(cli)?;
            run_with_threads(&cfg, threads)
        });
    match result {
        Ok(out) => {
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
            print!("{}", to_sorted_json(&out.summary));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Assertion { report, .. } = &e {
                print!("{}", to_sorted_json(report));
            }
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
