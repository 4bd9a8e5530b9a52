// Guards of the form `!(x > 0.0)` are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod cli;
mod commands;
mod error;
mod problem;
mod report;

use std::process::ExitCode;

use clap::Parser;
use cone_contraction::Execution;

use crate::error::{CliError, CliResult};

const THREADS_VAR: &str = "CONE_CONTRACTION_THREADS";

/// Honors the thread cap; a cap of 1 runs every sampling loop sequentially.
fn execution() -> CliResult<Execution> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(Execution::default());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| CliError::input(format!("{THREADS_VAR} must be a positive integer, got `{raw}`")))?;
    if threads == 1 {
        return Ok(Execution::Sequential);
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Numerical(format!("cannot start thread pool: {e}")))?;
    Ok(Execution::default())
}

fn main() -> ExitCode {
    let cli = cli::Cli::parse();
    let result = execution().and_then(|exec| commands::run(&cli, exec));
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
