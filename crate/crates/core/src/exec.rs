//! Data-parallel execution with a sequential fallback.
//!
//! Every helper here preserves index order in its outputs, so results never
//! depend on the number of worker threads. With the `parallel` feature off,
//! only [`Execution::Sequential`] exists and rayon is not linked.

use crate::error::Result;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How data-parallel loops are executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Rayon's current thread pool.
    #[cfg(feature = "parallel")]
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        #[cfg(feature = "parallel")]
        {
            Execution::Parallel
        }
        #[cfg(not(feature = "parallel"))]
        {
            Execution::Sequential
        }
    }
}

impl Execution {
    /// Applies `f` to every element, passing its index.
    pub fn for_each_mut<T, F>(self, items: &mut [T], f: F)
    where
        T: Send,
        F: Fn(usize, &mut T) + Sync + Send,
    {
        match self {
            Execution::Sequential => items.iter_mut().enumerate().for_each(|(i, t)| f(i, t)),
            #[cfg(feature = "parallel")]
            Execution::Parallel => items.par_iter_mut().enumerate().for_each(|(i, t)| f(i, t)),
        }
    }

    /// Like [`for_each_mut`](Self::for_each_mut) on two equally long slices.
    pub fn for_each_zip_mut<A, B, F>(self, a: &mut [A], b: &mut [B], f: F)
    where
        A: Send,
        B: Send,
        F: Fn(usize, &mut A, &mut B) + Sync + Send,
    {
        debug_assert_eq!(a.len(), b.len());
        match self {
            Execution::Sequential => a
                .iter_mut()
                .zip(b.iter_mut())
                .enumerate()
                .for_each(|(i, (x, y))| f(i, x, y)),
            #[cfg(feature = "parallel")]
            Execution::Parallel => a
                .par_iter_mut()
                .zip(b.par_iter_mut())
                .enumerate()
                .for_each(|(i, (x, y))| f(i, x, y)),
        }
    }

    /// Fallible update. When several elements fail, the error of the lowest
    /// index is returned.
    pub fn try_for_each_mut<T, F>(self, items: &mut [T], f: F) -> Result<()>
    where
        T: Send,
        F: Fn(usize, &mut T) -> Result<()> + Sync + Send,
    {
        let first = match self {
            Execution::Sequential => items
                .iter_mut()
                .enumerate()
                .filter_map(|(i, t)| f(i, t).err().map(|e| (i, e)))
                .next(),
            #[cfg(feature = "parallel")]
            Execution::Parallel => items
                .par_iter_mut()
                .enumerate()
                .filter_map(|(i, t)| f(i, t).err().map(|e| (i, e)))
                .min_by_key(|(i, _)| *i),
        };
        match first {
            Some((_, e)) => Err(e),
            None => Ok(()),
        }
    }

    /// Fallible zipped update. When several elements fail, the error of the
    /// lowest index is returned.
    pub fn try_for_each_zip_mut<A, B, F>(self, a: &mut [A], b: &mut [B], f: F) -> Result<()>
    where
        A: Send,
        B: Send,
        F: Fn(usize, &mut A, &mut B) -> Result<()> + Sync + Send,
    {
        debug_assert_eq!(a.len(), b.len());
        let first = match self {
            Execution::Sequential => a
                .iter_mut()
                .zip(b.iter_mut())
                .enumerate()
                .filter_map(|(i, (x, y))| f(i, x, y).err().map(|e| (i, e)))
                .next(),
            #[cfg(feature = "parallel")]
            Execution::Parallel => a
                .par_iter_mut()
                .zip(b.par_iter_mut())
                .enumerate()
                .filter_map(|(i, (x, y))| f(i, x, y).err().map(|e| (i, e)))
                .min_by_key(|(i, _)| *i),
        };
        match first {
            Some((_, e)) => Err(e),
            None => Ok(()),
        }
    }

    /// Evaluates `f(0..n)` and returns the results in index order.
    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        match self {
            Execution::Sequential => (0..n).map(f).collect(),
            #[cfg(feature = "parallel")]
            Execution::Parallel => (0..n).into_par_iter().map(f).collect(),
        }
    }

    /// Runs `f(chunk_index, chunk)` over consecutive chunks of `chunk_len`.
    pub fn for_each_chunk_mut<T, F>(self, items: &mut [T], chunk_len: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync + Send,
    {
        match self {
            Execution::Sequential => items
                .chunks_mut(chunk_len)
                .enumerate()
                .for_each(|(i, c)| f(i, c)),
            #[cfg(feature = "parallel")]
            Execution::Parallel => items
                .par_chunks_mut(chunk_len)
                .enumerate()
                .for_each(|(i, c)| f(i, c)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn all() -> Vec<Execution> {
        let mut v = vec![Execution::Sequential];
        #[cfg(feature = "parallel")]
        v.push(Execution::Parallel);
        v
    }

    #[test]
    fn map_range_keeps_order() {
        for e in all() {
            let v = e.map_range(1000, |i| i * i);
            assert!(v.iter().enumerate().all(|(i, &x)| x == i * i));
        }
    }

    #[test]
    fn first_error_is_lowest_index() {
        for e in all() {
            let mut a = vec![0u32; 500];
            let mut b = vec![0u32; 500];
            let r = e.try_for_each_zip_mut(&mut a, &mut b, |i, _, _| {
                if i % 97 == 13 {
                    Err(Error::Numeric(format!("{i}")))
                } else {
                    Ok(())
                }
            });
            assert_eq!(r, Err(Error::Numeric("13".into())));
        }
    }
}
