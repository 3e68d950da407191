//! Thin wrapper around rayon so every parallel loop in the crate has a
//! sequential twin. Parallelism is only ever applied across independent
//! outputs (batch items, output maps, LOSO folds), never across a shared
//! accumulator, so the two modes produce bit-identical results.

/// How a data-parallel kernel should execute.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Runs on the rayon thread pool when the `parallel` feature is enabled;
    /// falls back to sequential otherwise.
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

/// Applies `f` to every index in `0..n`, in parallel when requested.
pub fn for_each_index<F>(exec: Execution, n: usize, f: F)
where
    F: Fn(usize) + Sync + Send,
{
    match exec {
        Execution::Sequential => {
            for i in 0..n {
                f(i);
            }
        }
        Execution::Parallel => {
            #[cfg(feature = "parallel")]
            {
                use rayon::prelude::*;
                (0..n).into_par_iter().for_each(f);
                return;
            }
            #[cfg(not(feature = "parallel"))]
            for i in 0..n {
                f(i);
            }
        }
    }
}

/// Maps `f` over `0..n` preserving index order in the output.
pub fn map_indices<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        Execution::Sequential => (0..n).map(f).collect(),
        Execution::Parallel => {
            #[cfg(feature = "parallel")]
            {
                use rayon::prelude::*;
                return (0..n).into_par_iter().map(f).collect();
            }
            #[cfg(not(feature = "parallel"))]
            (0..n).map(f).collect()
        }
    }
}

/// Splits `out` into equally sized chunks and fills chunk `i` with `f(i, chunk)`.
/// The chunk boundaries make the writes disjoint, so the parallel and the
/// sequential path write exactly the same bytes.
pub fn fill_chunks<T, F>(exec: Execution, out: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    assert!(chunk_len > 0 && out.len() % chunk_len == 0);
    match exec {
        Execution::Sequential => {
            for (i, chunk) in out.chunks_mut(chunk_len).enumerate() {
                f(i, chunk);
            }
        }
        Execution::Parallel => {
            #[cfg(feature = "parallel")]
            {
                use rayon::prelude::*;
                out.par_chunks_mut(chunk_len).enumerate().for_each(|(i, chunk)| f(i, chunk));
                return;
            }
            #[cfg(not(feature = "parallel"))]
            for (i, chunk) in out.chunks_mut(chunk_len).enumerate() {
                f(i, chunk);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_bitwise() {
        let work = |i: usize| (i as f64).sin() * 1e6;
        let seq = map_indices(Execution::Sequential, 1000, work);
        let par = map_indices(Execution::Parallel, 1000, work);
        assert_eq!(seq, par);

        let mut a = vec![0f64; 64];
        let mut b = vec![0f64; 64];
        fill_chunks(Execution::Sequential, &mut a, 8, |i, c| {
            for (j, v) in c.iter_mut().enumerate() {
                *v = (i * 8 + j) as f64 / 3.0;
            }
        });
        fill_chunks(Execution::Parallel, &mut b, 8, |i, c| {
            for (j, v) in c.iter_mut().enumerate() {
                *v = (i * 8 + j) as f64 / 3.0;
            }
        });
        assert_eq!(a, b);
    }
}
