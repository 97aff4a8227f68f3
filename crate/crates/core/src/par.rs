//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (on by default) row-independent loops are
//! dispatched to rayon once the work estimate crosses [`PARALLEL_THRESHOLD`].
//! Each output row is computed by exactly one closure call with the same
//! arithmetic order in both modes, so results are bitwise identical whether
//! or not rayon is used.
//!
//! Parallelism can also be switched off at runtime with [`set_enabled`],
//! which the benchmarks use to compare both paths in one binary.

use std::sync::atomic::{AtomicBool, Ordering};

/// Approximate number of scalar multiply-adds below which a loop stays sequential.
pub const PARALLEL_THRESHOLD: usize = 32 * 1024;

static ENABLED: AtomicBool = AtomicBool::new(true);

/// Enables or disables rayon dispatch at runtime. No-op without the `parallel` feature.
pub fn set_enabled(enabled: bool) {
    ENABLED.store(enabled, Ordering::Relaxed);
}

/// Whether parallel dispatch is compiled in and currently enabled.
pub fn enabled() -> bool {
    cfg!(feature = "parallel") && ENABLED.load(Ordering::Relaxed)
}

#[cfg(feature = "parallel")]
#[inline]
fn go_parallel(work: usize) -> bool {
    work >= PARALLEL_THRESHOLD && enabled()
}

/// Calls `f(row_index, row)` for every `width`-sized row of `data`.
pub fn rows_mut<F>(data: &mut [f64], width: usize, work: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Send + Sync,
{
    if width == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    if go_parallel(work) {
        use rayon::prelude::*;
        data.par_chunks_mut(width).enumerate().for_each(|(r, row)| f(r, row));
        return;
    }
    let _ = work;
    data.chunks_mut(width).enumerate().for_each(|(r, row)| f(r, row));
}

/// Maps `f` over `0..n`, collecting results in index order.
pub fn map_indices<T, F>(n: usize, work: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Send + Sync,
{
    #[cfg(feature = "parallel")]
    if go_parallel(work) {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = work;
    (0..n).map(f).collect()
}

/// Maps `f` over a slice, collecting results in order.
pub fn map_slice<S, T, F>(items: &[S], work: usize, f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&S) -> T + Send + Sync,
{
    #[cfg(feature = "parallel")]
    if go_parallel(work) {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    let _ = work;
    items.iter().map(f).collect()
}
