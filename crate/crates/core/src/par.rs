//! Execution mode switch for the data-parallel inner loops.
//!
//! Work is always split into independent items whose results are collected
//! in input order, so both modes produce bitwise identical output. Without
//! the `parallel` feature every mode runs sequentially.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum ExecMode {
    Sequential,
    #[default]
    Parallel,
}

impl ExecMode {
    /// Whether this mode actually fans out across threads in this build.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Self::Parallel
    }
}

pub(crate) fn map_slice<T, R, F>(mode: ExecMode, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        return items.par_iter().map(f).collect();
    }
    let _ = mode;
    items.iter().map(f).collect()
}

pub(crate) fn map_range<R, F>(mode: ExecMode, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = mode;
    (0..n).map(f).collect()
}

pub(crate) fn try_for_each_mut<T, E, F>(mode: ExecMode, items: &mut [T], f: F) -> Result<(), E>
where
    T: Send,
    E: Send,
    F: Fn(&mut T) -> Result<(), E> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        return items.par_iter_mut().try_for_each(f);
    }
    let _ = mode;
    items.iter_mut().try_for_each(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64 * 0.1).collect();
        let a = map_slice(ExecMode::Sequential, &xs, |x| x.sin());
        let b = map_slice(ExecMode::Parallel, &xs, |x| x.sin());
        assert_eq!(a, b);
        assert_eq!(
            map_range(ExecMode::Sequential, 64, |i| i * i),
            map_range(ExecMode::Parallel, 64, |i| i * i)
        );
    }

    #[test]
    fn try_for_each_propagates_errors() {
        let mut v = vec![1, 2, 3];
        let r: Result<(), &str> = try_for_each_mut(ExecMode::Parallel, &mut v, |x| {
            if *x == 2 {
                Err("two")
            } else {
                *x += 10;
                Ok(())
            }
        });
        assert_eq!(r, Err("two"));
    }
}
