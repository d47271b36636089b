//! Execution strategy for the data-parallel loops.
//!
//! With the `parallel` feature the hot loops (convolution rows, per-image
//! evaluation, sweep combinations) run on the rayon pool; without it every
//! strategy degrades to the sequential path. Results are always produced in
//! index order, so both paths are bit-identical.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parallelism {
    Sequential,
    Parallel,
}

impl Default for Parallelism {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Parallelism::Parallel
        } else {
            Parallelism::Sequential
        }
    }
}

impl Parallelism {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Parallelism::Parallel
    }
}

/// `(0..n).map(f)` collected in index order.
pub fn map_indexed<T, F>(n: usize, par: Parallelism, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if par.is_parallel() {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = par;
    (0..n).map(f).collect()
}

/// Run `f(row_index, row)` over consecutive `width`-sized rows of `data`.
pub fn for_each_row<T, F>(data: &mut [T], width: usize, par: Parallelism, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if par.is_parallel() {
        data.par_chunks_mut(width)
            .enumerate()
            .for_each(|(r, row)| f(r, row));
        return;
    }
    let _ = par;
    data.chunks_mut(width).enumerate().for_each(|(r, row)| f(r, row));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategies_agree() {
        let seq = map_indexed(1000, Parallelism::Sequential, |i| i * i);
        let par = map_indexed(1000, Parallelism::Parallel, |i| i * i);
        assert_eq!(seq, par);

        let mut a = vec![0usize; 60];
        let mut b = vec![0usize; 60];
        for_each_row(&mut a, 7, Parallelism::Sequential, |r, row| {
            row.iter_mut().enumerate().for_each(|(c, v)| *v = r * 100 + c)
        });
        for_each_row(&mut b, 7, Parallelism::Parallel, |r, row| {
            row.iter_mut().enumerate().for_each(|(c, v)| *v = r * 100 + c)
        });
        assert_eq!(a, b);
        assert_eq!(a[59], 803);
    }
}
