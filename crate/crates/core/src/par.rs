//! Batch-level data parallelism with a sequential fallback.
//!
//! All hot loops in the crate go through [`par_map`] / [`par_chunk_map`].
//! With the default `parallel` feature they dispatch to rayon; without it
//! they run on plain iterators with identical results. Reductions over the
//! returned vectors are always done sequentially in index order, so results
//! are bit-identical regardless of thread count.

/// Map `f` over `items`, preserving order.
#[cfg(feature = "parallel")]
pub fn par_map<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    items.into_par_iter().map(f).collect()
}

/// Map `f` over `items`, preserving order.
#[cfg(not(feature = "parallel"))]
pub fn par_map<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    F: Fn(T) -> U,
{
    items.into_iter().map(f).collect()
}

/// Map `f` over index ranges `[start, end)` of a length-`n` batch, chunked
/// at `chunk` items. Chunk boundaries depend only on `n` and `chunk`, never
/// on thread count, so per-chunk partial results reduce deterministically.
pub fn par_chunk_map<U, F>(n: usize, chunk: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(std::ops::Range<usize>) -> U + Sync + Send,
{
    let chunk = chunk.max(1);
    let ranges: Vec<std::ops::Range<usize>> = (0..n)
        .step_by(chunk)
        .map(|s| s..(s + chunk).min(n))
        .collect();
    par_map(ranges, f)
}
