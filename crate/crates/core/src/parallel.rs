//! Thread-pool plumbing and deterministic parallel patterns.
//!
//! Every parallel loop in this crate follows one of two shapes:
//!
//! 1. *map*: each output cell is written by exactly one worker from
//!    immutable inputs, so the result is independent of the thread count;
//! 2. *map + ordered fold*: workers produce per-chunk partial results that
//!    are collected in index order and folded sequentially.
//!
//! Both shapes produce bit-identical output for any worker count, which is
//! what lets reports and serialized maps be compared byte-for-byte across
//! `--threads` settings.

use rayon::prelude::*;

use crate::{Error, Result};

/// Run `f` inside a rayon pool with `threads` workers (0 = hardware default).
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    if threads == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Pipeline(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Parallel map over an index range, collected in index order.
pub fn map_indexed<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    (0..n).into_par_iter().map(f).collect()
}

/// Parallel map over index chunks followed by a sequential in-order fold.
///
/// The fold order is fixed by the chunk index, never by completion order.
pub fn map_reduce_rows<T, A>(
    rows: usize,
    map: impl Fn(usize) -> T + Sync + Send,
    init: A,
    mut fold: impl FnMut(A, T) -> A,
) -> A
where
    T: Send,
{
    let partials = map_indexed(rows, map);
    let mut acc = init;
    for p in partials {
        acc = fold(acc, p);
    }
    acc
}

/// Sort an f64 slice into a canonical total order.
///
/// Summing the sorted values makes reductions invariant to the order in
/// which the inputs were gathered (e.g. view permutations).
pub fn sort_canonical(values: &mut [f64]) {
    values.sort_unstable_by(f64::total_cmp);
}

/// Sum after canonical sorting; order-invariant for permuted inputs.
pub fn canonical_sum(values: &mut [f64]) -> f64 {
    sort_canonical(values);
    values.iter().sum()
}
