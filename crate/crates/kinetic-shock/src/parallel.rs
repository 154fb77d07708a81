//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature the work is spread over the rayon pool;
//! without it the same closures run in order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How a data-parallel loop is executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

/// Evaluate `f` on `0..n`, preserving order.
pub fn map_indices<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => (0..n).into_par_iter().map(f).collect(),
        _ => (0..n).map(f).collect(),
    }
}

/// Fold `0..n` into per-worker accumulators and combine them.
///
/// Each run of `chunk` indices gets its own accumulator; accumulators are
/// merged left to right, so the result is bit-identical for any worker count.
pub fn fold_indices<A, I, F, R>(
    exec: Execution,
    n: usize,
    chunk: usize,
    init: I,
    fold: F,
    reduce: R,
) -> A
where
    A: Send,
    I: Fn() -> A + Sync + Send,
    F: Fn(&mut A, usize) + Sync + Send,
    R: Fn(A, A) -> A + Sync + Send,
{
    let chunk = chunk.max(1);
    let starts: Vec<usize> = (0..n).step_by(chunk).collect();
    let work = |s: &usize| {
        let mut acc = init();
        for i in *s..(*s + chunk).min(n) {
            fold(&mut acc, i);
        }
        acc
    };
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            let parts: Vec<A> = starts.par_iter().map(work).collect();
            parts.into_iter().fold(init(), &reduce)
        }
        _ => starts.iter().map(work).fold(init(), &reduce),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_keeps_order() {
        let v = map_indices(Execution::default(), 10, |i| i * i);
        assert_eq!(v, (0..10).map(|i| i * i).collect::<Vec<_>>());
    }

    #[test]
    fn fold_matches_sequential() {
        let s = fold_indices(
            Execution::Sequential,
            1000,
            37,
            || 0u64,
            |a, i| *a += i as u64,
            |a, b| a + b,
        );
        let p = fold_indices(
            Execution::Parallel,
            1000,
            37,
            || 0u64,
            |a, i| *a += i as u64,
            |a, b| a + b,
        );
        assert_eq!(s, 499500);
        assert_eq!(p, s);
    }

    #[test]
    fn float_fold_is_bit_identical() {
        let run = |e| {
            fold_indices(
                e,
                5000,
                7,
                || 0.0f64,
                |a, i| *a += (i as f64).sqrt().sin(),
                |a, b| a + b,
            )
        };
        assert_eq!(
            run(Execution::Sequential).to_bits(),
            run(Execution::Parallel).to_bits()
        );
    }
}
