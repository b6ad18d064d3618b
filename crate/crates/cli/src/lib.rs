//! Pipeline, output files and command-line plumbing for `repscope`.

pub mod config;
pub mod error;
pub mod output;
pub mod pipeline;
pub mod report;
pub mod synth;

pub use config::{Analyses, Covariate, RunConfig, TaskFilter};
pub use error::{CliError, CliResult};

/// Environment variable consulted when no thread count is given.
pub const THREADS_ENV: &str = "REPSCOPE_THREADS";

/// Thread count from the flag, else from `REPSCOPE_THREADS`, else the
/// rayon default.
pub fn resolve_threads(flag: Option<usize>) -> CliResult<Option<usize>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map(Some)
            .map_err(|_| CliError::Input(format!("{THREADS_ENV}={v:?} is not a thread count"))),
        Err(_) => Ok(None),
    }
}

/// Runs `f` inside a dedicated rayon pool. Results do not depend on the
/// thread count.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> CliResult<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Input("thread count must be positive".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Analysis(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}
