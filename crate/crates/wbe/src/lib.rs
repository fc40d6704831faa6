//! Command-line experiments on top of `wbe-core`: dataset generation,
//! filtered back-projection, training, rotation tests, sweeps and export.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use config::{Command, ExperimentConfig};
pub use error::{exit, HarnessError, Result};

/// Sizes the global thread pool. Without the `parallel` feature this is a no-op.
pub fn configure_jobs(jobs: Option<usize>) -> Result<()> {
    #[cfg(feature = "parallel")]
    if let Some(n) = jobs {
        if n == 0 {
            return Err(HarnessError::config("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| HarnessError::config(e.to_string()))?;
    }
    #[cfg(not(feature = "parallel"))]
    if jobs.is_some() {
        log::warn!("built without the parallel feature; --jobs is ignored");
    }
    Ok(())
}
