//! Command-line front end: recovery, evaluation, simulation, gradient
//! checks and label parsing.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod evaluate;
pub mod fsio;
pub mod predictions;
pub mod recover;
pub mod reports;

pub use config::{Cli, Command, RunConfig};
pub use error::{CliError, CliResult};

/// Summary printed on stdout plus warnings for stderr.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub summary: serde_json::Value,
    pub warnings: Vec<String>,
}

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "MONO3D_THREADS";

pub fn thread_count(var: Option<&str>) -> CliResult<Option<usize>> {
    match var {
        None => Ok(None),
        Some(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Input(format!(
                "{THREADS_ENV}={s:?} is not a positive integer"
            ))),
        },
    }
}

pub fn run(cfg: &RunConfig) -> CliResult<RunOutput> {
    match cfg.command {
        Command::Recover => recover::run_recover(cfg),
        Command::Eval => evaluate::run_eval(cfg),
        Command::Simulate => reports::run_simulate(cfg),
        Command::CheckGrad => reports::run_check_grad(cfg),
        Command::Parse => reports::run_parse(cfg),
    }
}

/// Runs `cfg` on a pool of `threads` workers (all cores when `None`).
pub fn run_with_threads(cfg: &RunConfig, threads: Option<usize>) -> CliResult<RunOutput> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Input(format!("cannot start thread pool: {e}")))?;
    pool.install(|| run(cfg))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thread_env_parsing() {
        assert_eq!(thread_count(None).unwrap(), None);
        assert_eq!(thread_count(Some("4")).unwrap(), Some(4));
        assert!(thread_count(Some("0")).is_err());
        assert!(thread_count(Some("many")).is_err());
    }
}
