//! Path-parallel fan-out with deterministic, index-ordered results.

use rayon::prelude::*;

use crate::error::Result;

/// Evaluates `f` for every path index and returns results in index order.
///
/// If several paths fail, the error of the lowest index is returned, so the
/// outcome does not depend on scheduling.
pub fn map_paths<T, F>(n_paths: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    let out: Vec<Result<T>> = (0..n_paths).into_par_iter().map(f).collect();
    out.into_iter().collect()
}

/// Like [`map_paths`] but hands every worker a reusable scratch value.
///
/// The scratch must not carry information between paths; it only saves
/// allocations.
pub fn map_paths_with<S, T, I, F>(n_paths: usize, init: I, f: F) -> Result<Vec<T>>
where
    T: Send,
    I: Fn() -> S + Sync + Send,
    F: Fn(&mut S, usize) -> Result<T> + Sync + Send,
{
    let out: Vec<Result<T>> = (0..n_paths)
        .into_par_iter()
        .map_init(init, |s, i| f(s, i))
        .collect();
    out.into_iter().collect()
}
