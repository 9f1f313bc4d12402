//! Execution strategy for the data-parallel kernels.
//!
//! Every parallel loop in the crate goes through the helpers here so that a
//! build without the `parallel` feature, or a caller asking for
//! [`Execution::Sequential`], runs the exact same closures in order. All
//! helpers preserve input order in their output, which keeps results
//! byte-identical across thread counts.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Execution {
    /// Use the current rayon pool when the `parallel` feature is enabled.
    #[default]
    Parallel,
    Sequential,
}

impl Execution {
    /// True when work will actually be spread over a thread pool.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Order-preserving map over a slice.
pub fn map_slice<T, R, F>(exec: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}

/// Order-preserving map over `0..n`.
pub fn map_range<R, F>(exec: Execution, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Order-preserving map over `0..n` that yields in chunks of `chunk` items,
/// handing each chunk to `f` as a range. Useful when per-item work is tiny.
pub fn map_chunks<R, F>(exec: Execution, n: usize, chunk: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(std::ops::Range<usize>) -> R + Sync + Send,
{
    let chunk = chunk.max(1);
    let n_chunks = n.div_ceil(chunk);
    map_range(exec, n_chunks, |c| {
        let start = c * chunk;
        f(start..(start + chunk).min(n))
    })
}

/// Mutably visit every element, possibly in parallel.
pub fn for_each_mut<T, F>(exec: Execution, items: &mut [T], f: F)
where
    T: Send,
    F: Fn(&mut T) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        items.par_iter_mut().for_each(f);
        return;
    }
    let _ = exec;
    items.iter_mut().for_each(f);
}

/// Run `f` with at most `threads` worker threads. `threads == 0` uses the
/// ambient pool. Without the `parallel` feature this just calls `f`.
pub fn with_threads<R, F>(threads: usize, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    #[cfg(feature = "parallel")]
    if threads > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("failed to build rayon thread pool");
        return pool.install(f);
    }
    let _ = threads;
    f()
}

/// Number of worker threads available to [`Execution::Parallel`].
pub fn current_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn helpers_preserve_order() {
        let items: Vec<u32> = (0..1000).collect();
        for exec in [Execution::Parallel, Execution::Sequential] {
            let doubled = map_slice(exec, &items, |v| v * 2);
            assert_eq!(doubled, items.iter().map(|v| v * 2).collect::<Vec<_>>());
            let chunks = map_chunks(exec, 1000, 64, |r| r.len());
            assert_eq!(chunks.iter().sum::<usize>(), 1000);
            assert_eq!(chunks.len(), 16);
        }
    }

    #[test]
    fn with_threads_runs_closure() {
        assert_eq!(with_threads(2, || 7), 7);
        assert_eq!(with_threads(0, || 8), 8);
    }
}
