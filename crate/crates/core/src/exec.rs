//! Data-parallel helpers with a sequential fallback.
//!
//! Every helper here produces results whose order (and, for reductions, whose
//! floating-point summation order) is independent of the number of worker
//! threads. Without the `parallel` feature, [`Execution::Parallel`] silently
//! runs sequentially.

/// How a data-parallel loop is executed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// True when this build can actually run work on a thread pool.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Map `f` over `items`, preserving input order.
pub fn map<T, R, F>(exec: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}

/// Map `f` over `0..n`, preserving order.
pub fn map_range<R, F>(exec: Execution, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Fold fixed-size chunks of `items` independently, then merge the chunk
/// accumulators left to right.
///
/// Chunk boundaries depend only on `chunk_size`, so the result is bit-identical
/// across thread counts. At most `wave` chunk accumulators are alive at once.
pub fn chunked_reduce<T, A, I, F, M>(
    exec: Execution,
    items: &[T],
    chunk_size: usize,
    init: I,
    fold: F,
    mut merge: M,
) -> A
where
    T: Sync,
    A: Send,
    I: Fn() -> A + Sync + Send,
    F: Fn(&mut A, &T) + Sync + Send,
    M: FnMut(&mut A, A),
{
    let chunk_size = chunk_size.max(1);
    let chunks: Vec<&[T]> = items.chunks(chunk_size).collect();
    let wave = 64;
    let mut total = init();
    for group in chunks.chunks(wave) {
        let partials = map(exec, group, |chunk| {
            let mut acc = init();
            for item in chunk.iter() {
                fold(&mut acc, item);
            }
            acc
        });
        for part in partials {
            merge(&mut total, part);
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order() {
        let xs: Vec<u32> = (0..1000).collect();
        let seq = map(Execution::Sequential, &xs, |x| x * 2);
        let par = map(Execution::Parallel, &xs, |x| x * 2);
        assert_eq!(seq, par);
        assert_eq!(seq[999], 1998);
    }

    #[test]
    fn chunked_reduce_is_execution_independent() {
        let xs: Vec<f64> = (0..10_000).map(|i| 1.0 / (i as f64 + 1.0)).collect();
        let run = |exec| {
            chunked_reduce(exec, &xs, 37, || 0.0f64, |a, x| *a += x, |a, b| *a += b)
        };
        assert_eq!(run(Execution::Sequential).to_bits(), run(Execution::Parallel).to_bits());
    }
}
