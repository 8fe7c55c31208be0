//! Execution policy for the data-parallel loops (per-atom field evaluation,
//! per-node quadrature, Monte Carlo batches).
//!
//! Every parallel loop produces its results in index order and all
//! reductions are performed sequentially afterwards, so output is
//! bit-identical regardless of the number of worker threads.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    /// Falls back to sequential when the `parallel` feature is disabled.
    #[default]
    Parallel,
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Evaluates `f(i)` for `i in 0..len` and returns the results in index order.
pub fn map_indexed<T, F>(exec: Execution, len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if exec.is_parallel() {
            use rayon::prelude::*;
            return (0..len).into_par_iter().map(f).collect();
        }
    }
    let _ = exec;
    (0..len).map(f).collect()
}

/// Fallible variant of [`map_indexed`]; the first error in index order wins.
pub fn try_map_indexed<T, E, F>(exec: Execution, len: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    map_indexed(exec, len, f).into_iter().collect()
}

/// Sum of `f(i)` computed in fixed-size chunks whose partial sums are
/// combined in chunk order.
pub fn chunked_sum<F>(exec: Execution, len: usize, chunk: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let chunk = chunk.max(1);
    let n_chunks = len.div_ceil(chunk);
    map_indexed(exec, n_chunks, |c| {
        let lo = c * chunk;
        let hi = (lo + chunk).min(len);
        (lo..hi).map(&f).sum::<f64>()
    })
    .into_iter()
    .sum()
}

/// Runs `f` on a dedicated pool of `threads` workers (all cores when None).
/// Without the `parallel` feature `f` simply runs on the caller's thread.
pub fn with_threads<T, F>(threads: Option<usize>, f: F) -> T
where
    T: Send,
    F: FnOnce() -> T + Send,
{
    #[cfg(feature = "parallel")]
    {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads.unwrap_or(0)).build();
        if let Ok(pool) = pool {
            return pool.install(f);
        }
    }
    let _ = threads;
    f()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree_bitwise() {
        let f = |i: usize| ((i as f64) * 0.37).sin() / (1.0 + i as f64);
        let a = chunked_sum(Execution::Sequential, 10_001, 64, f);
        let b = chunked_sum(Execution::Parallel, 10_001, 64, f);
        assert_eq!(a.to_bits(), b.to_bits());
        let va = map_indexed(Execution::Sequential, 100, f);
        let vb = map_indexed(Execution::Parallel, 100, f);
        assert_eq!(va, vb);
    }

    #[test]
    fn try_map_reports_first_error() {
        let r: Result<Vec<usize>, usize> = try_map_indexed(Execution::Parallel, 10, |i| if i >= 3 { Err(i) } else { Ok(i) });
        assert_eq!(r, Err(3));
    }
}
