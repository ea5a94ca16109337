//! Execution strategy for the data-parallel inner loops.
//!
//! Every hot loop in the engine (per-entity probability recomputation,
//! subsumption accumulation, embedding smoothing and gradients, nearest
//! neighbour search) goes through the helpers here. With the `parallel`
//! feature they fan out over rayon; without it, or with
//! [`Execution::Sequential`], they run on the calling thread. Results are
//! collected in index order either way, so both strategies produce identical
//! output.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
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

impl Execution {
    /// Whether loops actually fan out. Always false when built without the
    /// `parallel` feature.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }

    /// Maps `f` over `0..n`, preserving order.
    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Maps `f` over a slice, preserving order.
    pub fn map_slice<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// Applies `f` to fixed-size chunks of a mutable slice. `f` receives the
    /// chunk index and the chunk.
    pub fn for_each_chunk_mut<T, F>(self, data: &mut [T], chunk: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync + Send,
    {
        let chunk = chunk.max(1);
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            data.par_chunks_mut(chunk)
                .enumerate()
                .for_each(|(i, c)| f(i, c));
            return;
        }
        data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategies_agree() {
        let seq = Execution::Sequential.map_range(1000, |i| (i as f64).sqrt());
        let par = Execution::Parallel.map_range(1000, |i| (i as f64).sqrt());
        assert_eq!(seq, par);

        let mut a = vec![1.0f64; 97];
        let mut b = a.clone();
        Execution::Sequential.for_each_chunk_mut(&mut a, 4, |i, c| c.iter_mut().for_each(|x| *x *= i as f64));
        Execution::Parallel.for_each_chunk_mut(&mut b, 4, |i, c| c.iter_mut().for_each(|x| *x *= i as f64));
        assert_eq!(a, b);
    }
}
