//! Bounded fan-out for batch work (judging, evaluation, sweeps).
//!
//! With the `parallel` feature, work runs on a dedicated rayon pool sized to
//! the requested concurrency. Without it, or when the concurrency is 1, items
//! are processed in order on the calling thread. Output order always matches
//! input order.

/// Maps `f` over `items` with at most `concurrency` calls in flight.
pub fn map_bounded<T, R, F>(items: &[T], concurrency: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if concurrency > 1 && items.len() > 1 {
            return parallel::map(items, concurrency, f);
        }
    }
    let _ = concurrency;
    map_sequential(items, f)
}

pub fn map_sequential<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

/// Whether this build can run batches in parallel at all.
pub const fn parallel_enabled() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(feature = "parallel")]
mod parallel {
    use rayon::prelude::*;

    pub(super) fn map<T, R, F>(items: &[T], concurrency: usize, f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match rayon::ThreadPoolBuilder::new()
            .num_threads(concurrency)
            .build()
        {
            Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
            Err(err) => {
                log::warn!("falling back to sequential execution: {err}");
                items.iter().map(f).collect()
            }
        }
    }
}
