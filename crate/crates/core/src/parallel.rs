//! Order-preserving parallel maps.
//!
//! Work items run on the current rayon pool; results come back in index
//! order and are folded sequentially by the caller, so sums never depend on
//! how many workers took part.

use rayon::prelude::*;

pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

/// Build a pool with the given worker count and run `f` inside it.
pub fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> R {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool");
    pool.install(f)
}

/// Worker count from `KF_WORKERS`, defaulting to the machine's parallelism.
pub fn workers_from_env() -> usize {
    std::env::var("KF_WORKERS")
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}
