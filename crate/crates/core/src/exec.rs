//! Data-parallel dispatch for independent work items.
//!
//! Results are always collected in index order, so output does not depend on
//! scheduling. Without the `parallel` feature, [`Execution::Parallel`] runs
//! sequentially.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }

    pub fn map<T, F>(self, len: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return (0..len).into_par_iter().map(f).collect();
        }
        (0..len).map(f).collect()
    }

    /// Like [`Execution::map`]; the first error in index order wins.
    pub fn try_map<T, E, F>(self, len: usize, f: F) -> Result<Vec<T>, E>
    where
        T: Send,
        E: Send,
        F: Fn(usize) -> Result<T, E> + Sync + Send,
    {
        self.map(len, f).into_iter().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordered_results() {
        for exec in [Execution::Sequential, Execution::Parallel] {
            assert_eq!(exec.map(100, |i| i * i), (0..100).map(|i| i * i).collect::<Vec<_>>());
            let r: Result<Vec<usize>, usize> = exec.try_map(50, |i| if i % 7 == 3 { Err(i) } else { Ok(i) });
            assert_eq!(r, Err(3));
        }
    }
}
