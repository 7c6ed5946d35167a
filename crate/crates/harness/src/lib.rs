//! Experiment harness for the `meanfield` estimators: configuration, the
//! experiments behind each CLI subcommand, worker pools and file output.

pub mod config;
pub mod error;
pub mod experiments;
pub mod output;

pub use config::RunConfig;
pub use error::{HarnessError, HarnessResult};
pub use experiments::{Method, RateKind};

/// Environment variable holding the default worker count.
pub const WORKERS_ENV: &str = "MEANFIELD_WORKERS";

/// Worker count from, in order, the command line, the environment and the
/// config file. Zero means one worker per core.
pub fn resolve_workers(cli: Option<usize>, config: usize) -> HarnessResult<usize> {
    if let Some(n) = cli {
        return Ok(n);
    }
    match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| HarnessError::Usage(format!("{WORKERS_ENV} must be a non-negative integer, got '{v}'"))),
        Err(_) => Ok(config),
    }
}

/// Runs `f` on a dedicated pool of `workers` threads.
pub fn in_pool<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> HarnessResult<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| HarnessError::Usage(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(f))
}
