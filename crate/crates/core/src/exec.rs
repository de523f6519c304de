//! Order-preserving map over independent work items.
//!
//! With the `parallel` feature and more than one worker the items are spread
//! over a dedicated rayon pool; otherwise they run in order on the calling
//! thread. Output order always matches input order, so results never depend
//! on the worker count.

/// Worker count `0` means one per available core.
pub fn map_ordered<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if workers != 1 && items.len() > 1 {
        use rayon::prelude::*;
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
            return pool.install(|| items.par_iter().map(&f).collect());
        }
    }
    #[cfg(not(feature = "parallel"))]
    let _ = workers;
    items.iter().map(f).collect()
}

/// Whether this build can run work items concurrently.
pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel")
}
