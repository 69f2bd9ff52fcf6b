//! Per-thread call counters for the structured operators.
//!
//! Counters are bumped on the calling thread at each public entry point, so a
//! test can wrap a computation in [`count_calls`] and read back exactly how
//! many plain and phased products it issued.

use std::cell::Cell;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CallCounts {
    pub plain_matvecs: u64,
    pub phased_matvecs: u64,
    pub plain_grams: u64,
    pub phased_grams: u64,
}

impl CallCounts {
    /// Weighted-Gram requests at the operator level: a phased Gram counts as
    /// one request even though it issues three plain Grams internally.
    pub fn gram_requests(&self) -> u64 {
        self.plain_grams - 2 * self.phased_grams
    }

    fn minus(self, earlier: CallCounts) -> CallCounts {
        CallCounts {
            plain_matvecs: self.plain_matvecs - earlier.plain_matvecs,
            phased_matvecs: self.phased_matvecs - earlier.phased_matvecs,
            plain_grams: self.plain_grams - earlier.plain_grams,
            phased_grams: self.phased_grams - earlier.phased_grams,
        }
    }
}

thread_local! {
    static COUNTS: Cell<CallCounts> = Cell::new(CallCounts::default());
}

pub(crate) fn bump(f: impl FnOnce(&mut CallCounts)) {
    COUNTS.with(|c| {
        let mut v = c.get();
        f(&mut v);
        c.set(v);
    });
}

/// Snapshot of this thread's counters.
pub fn snapshot() -> CallCounts {
    COUNTS.with(|c| c.get())
}

/// Runs `f` and returns its output with the calls it made on this thread.
pub fn count_calls<R>(f: impl FnOnce() -> R) -> (R, CallCounts) {
    let before = snapshot();
    let out = f();
    (out, snapshot().minus(before))
}
