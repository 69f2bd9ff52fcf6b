//! Monotonic-clock trials with optional allocation peaks.

use std::hint::black_box;
use std::time::Instant;

use crate::alloc;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Trial {
    pub wall_ns: u64,
    pub peak_bytes: i64,
}

/// Runs `warmups` untimed calls, then one timed call per trial.
pub fn measure<R, E>(warmups: usize, trials: usize, mut f: impl FnMut() -> Result<R, E>) -> Result<Vec<Trial>, E> {
    for _ in 0..warmups {
        black_box(f()?);
    }
    let mut out = Vec::with_capacity(trials);
    for _ in 0..trials {
        let m = alloc::mark();
        let start = Instant::now();
        let r = f()?;
        let wall = start.elapsed();
        black_box(r);
        out.push(Trial {
            wall_ns: wall.as_nanos() as u64,
            peak_bytes: alloc::peak_since(m),
        });
    }
    Ok(out)
}

/// Wall time of one call, with its result.
pub fn timed<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let start = Instant::now();
    let r = f();
    (r, start.elapsed().as_nanos() as u64)
}
