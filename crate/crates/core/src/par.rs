//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature, work is spread over the current rayon pool.
//! Without it, or when the pool has a single thread, everything runs on the
//! calling thread. Results are always collected in index order, so outputs do
//! not depend on the schedule.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `0..len` and collect the results in index order.
pub fn map_range<U, F>(len: usize, f: F) -> Vec<U>
where
    F: Fn(usize) -> U + Sync + Send,
    U: Send,
{
    #[cfg(feature = "parallel")]
    {
        if len > 1 && rayon::current_num_threads() > 1 {
            return (0..len).into_par_iter().map(f).collect();
        }
    }
    (0..len).map(f).collect()
}

/// Map `f` over a slice and collect the results in order.
pub fn map_slice<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    F: Fn(&T) -> U + Sync + Send,
    U: Send,
{
    map_range(items.len(), |i| f(&items[i]))
}

/// Run `f` with `threads` workers. `0` means the library default.
/// Without the `parallel` feature the thread count is ignored.
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        if threads > 0 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .expect("failed to build thread pool");
            return pool.install(f);
        }
    }
    let _ = threads;
    f()
}

/// Number of workers the current context will use.
pub fn current_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved_for_any_thread_count() {
        for threads in [1, 2, 4] {
            let v = with_threads(threads, || map_range(100, |i| i * i));
            assert_eq!(v, (0..100).map(|i| i * i).collect::<Vec<_>>());
        }
    }
}
