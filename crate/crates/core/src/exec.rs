//! Data-parallel helpers over spatial cells.
//!
//! With the `parallel` feature the cell loops run on the rayon pool;
//! without it, or with [`Execution::Sequential`], they run in order on the
//! calling thread. Both paths call the same closures, so results are
//! identical bit-for-bit.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    #[default]
    Parallel,
    Sequential,
}

impl Execution {
    fn parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// `f(k)` for `k in 0..n`, collected in order.
pub fn map_indices<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.parallel() {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec.parallel();
    (0..n).map(f).collect()
}

/// Calls `f(k, chunk_k)` on consecutive `chunk`-sized pieces of `data`.
pub fn for_each_chunk_mut<T, F>(exec: Execution, data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.parallel() {
        data.par_chunks_mut(chunk).enumerate().for_each(|(k, c)| f(k, c));
        return;
    }
    let _ = exec.parallel();
    data.chunks_mut(chunk).enumerate().for_each(|(k, c)| f(k, c));
}

/// Fallible variant of [`map_indices`]; returns the error of the lowest
/// failing index so diagnostics do not depend on scheduling.
pub fn try_map_indices<T, E, F>(exec: Execution, n: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    map_indices(exec, n, f).into_iter().collect()
}

/// Sets the global pool width; `0` keeps rayon's default. Only the first
/// call in a process has any effect.
pub fn set_threads(threads: usize) {
    #[cfg(feature = "parallel")]
    if threads > 0 {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
}
