//! Cross-validation model averaging for single-index models.

pub mod averaging;
pub mod data;
pub mod error;
pub mod estimator;
pub mod kernel;
pub mod monte_carlo;
pub mod optim;
pub mod screening;
pub mod weights;

pub use error::{Error, Result};

/// Worker count: `SIMAVG_THREADS` when set to a positive integer, else the
/// number of available cores.
pub fn worker_threads() -> usize {
    std::env::var("SIMAVG_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs `f` on a pool of [`worker_threads`] workers.
pub fn install<R, F>(f: F) -> R
where
    F: FnOnce() -> R + Send,
    R: Send,
{
    match rayon::ThreadPoolBuilder::new().num_threads(worker_threads()).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}
