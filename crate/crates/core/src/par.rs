//! Order-preserving data-parallel helpers.
//!
//! With the `parallel` feature these fan out over rayon's pool; without it
//! they run sequentially. Results are identical either way: every helper
//! computes each element independently and collects in index order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "GEOLIFT_THREADS";

/// `(0..n).map(f).collect()`, possibly in parallel.
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// `items.iter().map(f).collect()`, possibly in parallel.
pub fn map_slice<S, T, F>(items: &[S], f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&S) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Fills `out` in chunks of `chunk` elements; `f(chunk_index, chunk)`.
pub fn for_each_chunk<T, F>(out: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        out.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    }
    #[cfg(not(feature = "parallel"))]
    {
        out.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    }
}

/// Configures the global pool from [`THREADS_ENV`], if set. Returns the
/// requested count. Calling it after the pool is initialized is harmless.
pub fn configure_from_env() -> Option<usize> {
    let n = std::env::var(THREADS_ENV).ok()?.trim().parse::<usize>().ok().filter(|&n| n > 0)?;
    #[cfg(feature = "parallel")]
    {
        if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            log::debug!("thread pool already initialized; {THREADS_ENV} ignored");
        }
    }
    Some(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn helpers_preserve_order() {
        assert_eq!(map_range(5, |i| i * i), vec![0, 1, 4, 9, 16]);
        assert_eq!(map_slice(&[3, 1, 2], |x| x + 1), vec![4, 2, 3]);
        let mut buf = vec![0usize; 10];
        for_each_chunk(&mut buf, 3, |ci, c| c.iter_mut().enumerate().for_each(|(k, x)| *x = ci * 3 + k));
        assert_eq!(buf, (0..10).collect::<Vec<_>>());
    }
}
