//! Data-parallel helpers.
//!
//! Every batch loop in the crate (per-hypothesis scoring, per-sequence
//! gradients, per-utterance edit distances) goes through [`map_indexed`],
//! which returns results in input order. Reductions over those results are
//! done sequentially by the caller, so output is bit-identical whether the
//! `parallel` feature is enabled or not and regardless of thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How a batch loop is executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Uses rayon when the `parallel` feature is compiled in, otherwise
    /// falls back to the sequential path.
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

pub fn map_indexed<T, R, F>(exec: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => items
            .par_iter()
            .enumerate()
            .map(|(i, item)| f(i, item))
            .collect(),
        _ => items.iter().enumerate().map(|(i, item)| f(i, item)).collect(),
    }
}

/// Like [`map_indexed`] but stops at the first error (in input order).
pub fn try_map_indexed<T, R, E, F>(exec: Execution, items: &[T], f: F) -> Result<Vec<R>, E>
where
    T: Sync,
    R: Send,
    E: Send,
    F: Fn(usize, &T) -> Result<R, E> + Sync + Send,
{
    map_indexed(exec, items, f).into_iter().collect()
}
