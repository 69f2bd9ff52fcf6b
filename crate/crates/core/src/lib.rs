//! Exact fast linear algebra for the Laplace kernel `exp(−|a_i − b_j| / t)` on
//! learnable one-dimensional anchors.
//!
//! Matrix–vector products cost `O(max(n, k) log min(n, k))`, weighted Gram
//! matrices `O(n² + k log n)`, and both are exact: they reduce to
//! exponentially weighted prefix/suffix scans over sorted anchors.

pub mod baselines;
pub mod density;
pub mod error;
pub mod gradients;
pub mod instrument;
pub mod limits;
pub(crate) mod par;
pub mod ops;
pub mod oracle;
pub mod real;
pub mod scan;

pub use error::{Error, Result};
pub use ops::{Dispatch, GramResult, LaplexOperator, Phases};
pub use real::Real;
pub use scan::SortedAnchors;

/// Whether data-parallel loops run on the rayon pool in this build.
pub fn parallel_enabled() -> bool {
    par::enabled()
}
