//! Command-line front end for Nyström kernel self-supervised learning.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

pub use error::{CliError, CliResult};

pub const THREADS_ENV: &str = "NYSSL_THREADS";

/// Sizes the global rayon pool from `--threads`, then `NYSSL_THREADS`;
/// with neither set rayon picks its own default.
pub fn init_threads(threads: Option<usize>) -> CliResult<()> {
    let n = match (threads, std::env::var(THREADS_ENV)) {
        (Some(n), _) => n,
        (None, Ok(v)) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| CliError::config(format!("{THREADS_ENV}: '{v}' is not a thread count")))?,
        (None, Err(_)) => return Ok(()),
    };
    if n == 0 {
        return Err(CliError::config("threads: must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::config(format!("threads: {e}")))
}
