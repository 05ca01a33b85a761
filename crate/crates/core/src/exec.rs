//! Row-chunk scheduling for batch inference.
//!
//! Results are always returned in chunk order, so the output of a run does
//! not depend on the execution mode.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    Sequential,
    /// Chunks run on the rayon pool. Without the `parallel` feature this
    /// behaves like [`Execution::Sequential`].
    #[default]
    Parallel,
}

/// Half-open row ranges of at most `chunk` rows covering `0..n`.
pub fn chunk_ranges(n: usize, chunk: usize) -> Vec<(usize, usize)> {
    let chunk = chunk.max(1);
    (0..n)
        .step_by(chunk)
        .map(|s| (s, (s + chunk).min(n)))
        .collect()
}

/// Applies `f` to every chunk of `0..n` and collects the results in order.
/// The first error in chunk order is returned.
pub fn map_chunks<T, E, F>(exec: Execution, n: usize, chunk: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize, usize) -> Result<T, E> + Sync + Send,
{
    let ranges = chunk_ranges(n, chunk);
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            ranges.into_par_iter().map(|(s, e)| f(s, e)).collect()
        }
        _ => ranges.into_iter().map(|(s, e)| f(s, e)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_cover_exactly() {
        assert_eq!(chunk_ranges(5, 2), vec![(0, 2), (2, 4), (4, 5)]);
        assert!(chunk_ranges(0, 3).is_empty());
        assert_eq!(chunk_ranges(2, 0), vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn modes_agree() {
        let f = |s: usize, e: usize| Ok::<_, ()>((s..e).map(|i| i * i).sum::<usize>());
        let a = map_chunks(Execution::Sequential, 1000, 7, f).unwrap();
        let b = map_chunks(Execution::Parallel, 1000, 7, f).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn first_error_in_order() {
        let r: Result<Vec<()>, usize> = map_chunks(Execution::Parallel, 10, 2, |s, _| {
            if s >= 4 {
                Err(s)
            } else {
                Ok(())
            }
        });
        assert_eq!(r, Err(4));
    }
}
