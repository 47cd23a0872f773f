//! Order-preserving maps over independent work items.
//!
//! With the `parallel` feature, [`map`] runs on the rayon pool; without it,
//! every call degrades to [`map_sequential`]. Results always come back in
//! input order, so any reduction performed by the caller over the returned
//! vector is independent of the thread count.

/// Sequential reference implementation.
pub fn map_sequential<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(usize, &T) -> R,
{
    items.iter().enumerate().map(|(i, x)| f(i, x)).collect()
}

/// Parallel map when the `parallel` feature is on, sequential otherwise.
#[cfg(feature = "parallel")]
pub fn map_parallel<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().enumerate().map(|(i, x)| f(i, x)).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_parallel<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    map_sequential(items, f)
}

/// The crate-wide default strategy.
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    map_parallel(items, f)
}

/// Configures the global pool. A no-op without the `parallel` feature.
/// Fails if the pool was already initialised with a different size.
pub fn init_threads(threads: usize) -> Result<(), String> {
    #[cfg(feature = "parallel")]
    {
        if threads == 0 {
            return Ok(());
        }
        match rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            Ok(()) => Ok(()),
            Err(_) if rayon::current_num_threads() == threads => Ok(()),
            Err(e) => Err(e.to_string()),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_matches_sequential_order() {
        let xs: Vec<u64> = (0..1000).collect();
        let a = map_sequential(&xs, |i, x| i as u64 * 31 + x);
        let b = map_parallel(&xs, |i, x| i as u64 * 31 + x);
        assert_eq!(a, b);
    }
}
