//! Parallel/sequential dispatch for data-parallel inner loops.
//!
//! Every helper here produces bit-identical results with and without the
//! `parallel` feature: per-element maps write independent output slots, and
//! reductions run over fixed-size chunks that are always combined in chunk
//! order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Chunk length used by ordered reductions. Fixed so that the summation
/// order never depends on thread count.
pub const CHUNK: usize = 1024;

/// Maps `f` over `0..n`, preserving index order in the output.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
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

/// Maps `f` over a slice with the element index, preserving order.
pub fn map_slice<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().enumerate().map(|(i, x)| f(i, x)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().enumerate().map(|(i, x)| f(i, x)).collect()
    }
}

/// Sums `per_chunk` over fixed-size chunks of `items`, combining partial
/// results in chunk order.
pub fn chunked_sum<T, A, F, G>(items: &[T], zero: A, per_chunk: F, combine: G) -> A
where
    T: Sync,
    A: Send,
    F: Fn(&[T]) -> A + Sync + Send,
    G: Fn(A, A) -> A,
{
    let partials: Vec<A>;
    #[cfg(feature = "parallel")]
    {
        partials = items.par_chunks(CHUNK).map(|c| per_chunk(c)).collect();
    }
    #[cfg(not(feature = "parallel"))]
    {
        partials = items.chunks(CHUNK).map(|c| per_chunk(c)).collect();
    }
    partials.into_iter().fold(zero, combine)
}
