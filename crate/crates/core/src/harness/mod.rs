//! Experiment driver behind the `acmc` binary.
//!
//! Each subcommand reads one JSON config ([`config::ExperimentConfig`]) and
//! writes one output file. All randomness is derived from the config seed, so
//! outputs are identical for any worker count.

pub mod checks;
pub mod config;
pub mod oracle_check;
pub mod train;
pub mod tree_build;
pub mod variance;

use crate::error::{Error, Result};

/// Run `f` on a dedicated rayon pool with `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::domain(format!("cannot start worker pool: {e}")))?;
    pool.install(f)
}
