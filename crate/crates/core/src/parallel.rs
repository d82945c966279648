//! Ordered map over a slice, parallel or sequential.
//!
//! Every data-parallel loop in the crate goes through [`map`], so results are
//! always assembled in input order and any per-item randomness is derived
//! from the item index, never from scheduling.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    pub fn from_flag(parallel: bool) -> Self {
        if parallel {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }

    /// True when this mode actually fans out (requires the `parallel` feature).
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }
}

pub fn map<T, R, F>(exec: Exec, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec == Exec::Parallel {
        use rayon::prelude::*;
        return items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let _ = exec;
    items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

/// Like [`map`] but short-circuits on the first error (by index order in the
/// sequential case; any error in the parallel case).
pub fn try_map<T, R, E, F>(exec: Exec, items: &[T], f: F) -> Result<Vec<R>, E>
where
    T: Sync,
    R: Send,
    E: Send,
    F: Fn(usize, &T) -> Result<R, E> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec == Exec::Parallel {
        use rayon::prelude::*;
        return items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let _ = exec;
    items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_and_preserve_order() {
        let xs: Vec<u64> = (0..1000).collect();
        let a = map(Exec::Sequential, &xs, |i, x| x * 3 + i as u64);
        let b = map(Exec::Parallel, &xs, |i, x| x * 3 + i as u64);
        assert_eq!(a, b);
        assert_eq!(a[10], 40);
    }

    #[test]
    fn try_map_propagates() {
        let xs: Vec<i32> = (0..10).collect();
        let r: Result<Vec<i32>, String> =
            try_map(Exec::Parallel, &xs, |_, &x| if x == 7 { Err("seven".into()) } else { Ok(x) });
        assert_eq!(r.unwrap_err(), "seven");
    }
}
