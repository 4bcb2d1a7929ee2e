//! Execution strategy for batch work.
//!
//! Every batch routine in this crate splits its input into fixed-size chunks
//! and reduces chunk results in index order, so results are bit-identical
//! whether the chunks run on the rayon pool or one after another.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Number of items handled by one unit of parallel work.
pub const CHUNK: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecMode {
    Sequential,
    #[default]
    Parallel,
}

impl ExecMode {
    /// The mode used when callers don't choose one: parallel if the crate was
    /// built with the `parallel` feature.
    pub fn auto() -> Self {
        if cfg!(feature = "parallel") {
            ExecMode::Parallel
        } else {
            ExecMode::Sequential
        }
    }

    fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == ExecMode::Parallel
    }

    /// Maps `f` over `items`, preserving order.
    pub fn map<T, U, F>(self, items: &[T], f: F) -> Vec<U>
    where
        T: Sync,
        U: Send,
        F: Fn(&T) -> U + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// Maps `f` over `0..n`, preserving order.
    pub fn map_range<U, F>(self, n: usize, f: F) -> Vec<U>
    where
        U: Send,
        F: Fn(usize) -> U + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Runs `f` on consecutive chunks of `items` (each chunk at most `CHUNK`
    /// long, tagged with its starting index) and returns the per-chunk
    /// results in chunk order.
    pub fn map_chunks<T, U, F>(self, items: &[T], f: F) -> Vec<U>
    where
        T: Sync,
        U: Send,
        F: Fn(usize, &[T]) -> U + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return items
                .par_chunks(CHUNK)
                .enumerate()
                .map(|(i, c)| f(i * CHUNK, c))
                .collect();
        }
        items
            .chunks(CHUNK)
            .enumerate()
            .map(|(i, c)| f(i * CHUNK, c))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        let sum = |mode: ExecMode| -> f64 {
            mode.map_chunks(&xs, |_, c| c.iter().sum::<f64>())
                .into_iter()
                .sum()
        };
        assert_eq!(
            sum(ExecMode::Sequential).to_bits(),
            sum(ExecMode::Parallel).to_bits()
        );
        let a = ExecMode::Sequential.map_range(100, |i| i * i);
        let b = ExecMode::Parallel.map_range(100, |i| i * i);
        assert_eq!(a, b);
    }
}
