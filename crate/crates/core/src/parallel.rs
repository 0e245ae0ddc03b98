//! Index-ordered data-parallel maps.
//!
//! With the `parallel` feature the work is spread over the rayon pool;
//! without it the same closures run sequentially. Results are always
//! returned in index order, so reductions over them are bit-reproducible.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// `(0..n).map(f)` collected in index order.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
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

/// Like [`map_indexed`] for fallible work; the error with the smallest index wins.
pub fn try_map_indexed<T, E, F>(n: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    map_indexed(n, f).into_iter().collect()
}
