//! Deterministic parallel reductions.
//!
//! Work is split into fixed-size chunks independent of the thread count and
//! partial results are combined in chunk order, so results are bitwise
//! reproducible for any `--threads` setting.

use rayon::prelude::*;

pub const CHUNK: usize = 4096;

/// Sums `f(i)` for `i in 0..n`.
pub fn par_sum<T, F>(n: usize, f: F) -> T
where
    T: Copy + Send + std::ops::Add<Output = T> + Default,
    F: Fn(usize) -> T + Sync + Send,
{
    let partials: Vec<T> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(n);
            (lo..hi).fold(T::default(), |acc, i| acc + f(i))
        })
        .collect();
    partials.into_iter().fold(T::default(), |a, b| a + b)
}

/// Maximum of `f(i)` (NaN-free inputs assumed); `init` when `n == 0`.
pub fn par_max<F>(n: usize, init: f64, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    (0..n).into_par_iter().map(f).reduce(|| init, f64::max)
}
