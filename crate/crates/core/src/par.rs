//! Thin shims so data-parallel loops compile to plain iterators when the
//! `parallel` feature is off.

#[cfg(feature = "parallel")]
pub(crate) use rayon::prelude::*;

#[cfg(feature = "parallel")]
macro_rules! par_iter_mut {
    ($e:expr) => {
        $e.par_iter_mut()
    };
}
#[cfg(not(feature = "parallel"))]
macro_rules! par_iter_mut {
    ($e:expr) => {
        $e.iter_mut()
    };
}

#[cfg(feature = "parallel")]
macro_rules! par_chunks_mut {
    ($e:expr, $n:expr) => {
        $e.par_chunks_mut($n)
    };
}
#[cfg(not(feature = "parallel"))]
macro_rules! par_chunks_mut {
    ($e:expr, $n:expr) => {
        $e.chunks_mut($n)
    };
}

pub(crate) use {par_chunks_mut, par_iter_mut};

/// Whether this build runs data-parallel loops on the rayon pool.
pub const fn enabled() -> bool {
    cfg!(feature = "parallel")
}

/// `(0..n).map(f).collect()`, on the pool when available.
#[cfg(feature = "parallel")]
pub(crate) fn map_indices<R: Send, F: Fn(usize) -> R + Sync + Send>(n: usize, f: F) -> Vec<R> {
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_indices<R, F: Fn(usize) -> R>(n: usize, f: F) -> Vec<R> {
    (0..n).map(f).collect()
}
