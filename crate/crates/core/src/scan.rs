//! Sorted anchor sets and the exponentially weighted prefix/suffix scans
//! that every fast operator in this crate reduces to.
//!
//! For ascending anchors `a`, the lower-triangular kernel sum
//! `t_i = Σ_{j ≤ i} exp(a_j − a_i) p_j` obeys `t_i = p_i + exp(a_{i−1} − a_i) t_{i−1}`,
//! and the upper-triangular sum is the mirrored recurrence. Every decay factor
//! is in `(0, 1]`, so the recurrences are evaluated directly on signed payloads
//! without a log-domain detour.

use crate::error::{check_len, Error, Result};
#[cfg(feature = "parallel")]
use crate::par::*;
use crate::real::{all_finite, Real};

/// One ascending anchor set together with the permutation back to caller order.
#[derive(Clone, Debug, PartialEq)]
pub struct SortedAnchors<T> {
    values: Vec<T>,
    perm: Vec<usize>,
    decays: ScanDecays<T>,
    /// Staged plans for `gather` and `scatter` on long inputs.
    to_sorted: Option<Reorder>,
    to_user: Option<Reorder>,
}

impl<T: Real> SortedAnchors<T> {
    /// Stable-sorts `raw`; equal anchors keep their input order.
    pub fn new(raw: &[T]) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::EmptyInput("anchors"));
        }
        if !all_finite(raw) {
            return Err(Error::NonFinite("anchors"));
        }
        let mut perm: Vec<usize> = (0..raw.len()).collect();
        // Finite values compare totally; sort_by is stable.
        perm.sort_by(|&i, &j| raw[i].partial_cmp(&raw[j]).unwrap());
        let values: Vec<T> = perm.iter().map(|&p| raw[p]).collect();
        Ok(Self::from_sorted_parts(values, perm))
    }

    /// Like [`SortedAnchors::new`] after dividing every anchor by `scale`.
    pub(crate) fn new_scaled(raw: &[T], scale: T) -> Result<Self> {
        let scaled: Vec<T> = raw.iter().map(|&v| v / scale).collect();
        if !all_finite(&scaled) {
            return Err(Error::NonFinite("scaled anchors"));
        }
        Self::new(&scaled)
    }

    fn from_sorted_parts(values: Vec<T>, perm: Vec<usize>) -> Self {
        let decays = ScanDecays::new(&values, T::one());
        let (to_sorted, to_user) = if perm.len() >= REORDER_MIN && perm.len() <= u32::MAX as usize {
            let mut inv = vec![0; perm.len()];
            for (s, &p) in perm.iter().enumerate() {
                inv[p] = s;
            }
            (Some(Reorder::new(&inv)), Some(Reorder::new(&perm)))
        } else {
            (None, None)
        };
        Self {
            values,
            perm,
            decays,
            to_sorted,
            to_user,
        }
    }

    /// Ascending anchor values.
    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// `perm[sorted_index] = original_index`.
    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    /// `decays[i] = exp(values[i] − values[i+1])`.
    pub fn decays(&self) -> &[T] {
        self.decays.step()
    }

    pub(crate) fn scan_decays(&self) -> &ScanDecays<T> {
        &self.decays
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Anchors back in the caller's original order.
    pub fn unsorted(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.len()];
        self.scatter_into(&self.values, &mut out);
        out
    }

    /// Reorders a caller-order vector into sorted order.
    pub fn gather(&self, user: &[T]) -> Vec<T> {
        match &self.to_sorted {
            Some(plan) => {
                let mut out = vec![T::zero(); self.len()];
                plan.apply(user, &mut out);
                out
            }
            None => self.perm.iter().map(|&p| user[p]).collect(),
        }
    }

    /// Reorders a sorted-order vector back into caller order.
    pub fn scatter(&self, sorted: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.len()];
        self.scatter_into(sorted, &mut out);
        out
    }

    /// Writes the elementwise sum `left + right` into `user` in caller order.
    pub(crate) fn scatter_sum_into(&self, left: &[T], right: &[T], user: &mut [T]) {
        match &self.to_user {
            Some(plan) => plan.apply_with(|s| left[s] + right[s], user),
            None => {
                for ((&l, &r), &p) in left.iter().zip(right).zip(&self.perm) {
                    user[p] = l + r;
                }
            }
        }
    }

    pub(crate) fn scatter_into(&self, sorted: &[T], user: &mut [T]) {
        if let Some(plan) = &self.to_user {
            plan.apply(sorted, user);
            return;
        }
        for (&s, &p) in sorted.iter().zip(&self.perm) {
            user[p] = s;
        }
    }

    /// `inverse[original_index] = sorted_index`.
    pub fn inverse_perm(&self) -> Vec<usize> {
        let mut inv = vec![0; self.len()];
        for (s, &p) in self.perm.iter().enumerate() {
            inv[p] = s;
        }
        inv
    }

    /// Decays of the squared kernel `exp(−2|·|)` used by the weighted Gram.
    pub(crate) fn doubled_decays(&self) -> ScanDecays<T> {
        ScanDecays::new(&self.values, T::of(2.0))
    }
}

/// Permutations at least this long are applied through a [`Reorder`] plan.
const REORDER_MIN: usize = 1 << 18;

/// Target window of the first reorder pass, in elements.
const REORDER_WINDOW_BITS: u32 = 15;

/// A fixed permutation `dst[target(i)] = src[i]` applied in two passes: first
/// partition by target window (a few dozen sequential write streams), then
/// place within each cache-sized window. Far cheaper than one fully random
/// pass once the vectors spill out of cache.
#[derive(Clone, Debug, PartialEq)]
struct Reorder {
    /// Staging slot of source element `i`.
    stage: Vec<u32>,
    /// Destination of staging slot `j`.
    target: Vec<u32>,
}

impl Reorder {
    fn new(dest: &[usize]) -> Self {
        let windows = (dest.len() >> REORDER_WINDOW_BITS) + 1;
        let mut next = vec![0u32; windows];
        for &d in dest {
            next[d >> REORDER_WINDOW_BITS] += 1;
        }
        let mut acc = 0u32;
        for slot in &mut next {
            let c = *slot;
            *slot = acc;
            acc += c;
        }
        let mut stage = Vec::with_capacity(dest.len());
        let mut target = vec![0u32; dest.len()];
        for &d in dest {
            let w = &mut next[d >> REORDER_WINDOW_BITS];
            stage.push(*w);
            target[*w as usize] = d as u32;
            *w += 1;
        }
        Self { stage, target }
    }

    fn apply<T: Real>(&self, src: &[T], dst: &mut [T]) {
        self.apply_with(|i| src[i], dst)
    }

    /// Like [`Reorder::apply`] with source element `i` produced by `src(i)`.
    fn apply_with<T: Real>(&self, src: impl Fn(usize) -> T, dst: &mut [T]) {
        let mut staged = vec![T::zero(); self.stage.len()];
        for (i, &j) in self.stage.iter().enumerate() {
            staged[j as usize] = src(i);
        }
        for (&v, &d) in staged.iter().zip(&self.target) {
            dst[d as usize] = v;
        }
    }
}

/// Decay factors for the blocked scans over one sorted anchor set.
///
/// Sorted positions are cut into fixed blocks of `block` entries. Inside a block
/// the recurrence runs on `step`; the carry entering a block is applied with
/// `prefix_fix[i] = exp(s(v_e − v_i))` (`e` = last index of the previous block)
/// or `suffix_fix[i] = exp(s(v_i − v_f))` (`f` = first index of the next block),
/// each a single exponential of an exact anchor difference. Chains of rounded
/// decays therefore never run longer than one block plus one carry per block.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct ScanDecays<T> {
    step: Vec<T>,
    block: usize,
    prefix_fix: Vec<T>,
    suffix_fix: Vec<T>,
}

/// Below this many entries a scan stays on the calling thread.
#[cfg(feature = "parallel")]
const PARALLEL_SCAN_MIN: usize = 1 << 14;

/// Block length for `len` sorted entries: a power of two near `√len`, at least 32.
/// Depends on `len` only, so results are identical for every thread count.
pub(crate) fn scan_block(len: usize) -> usize {
    let root = (len as f64).sqrt().ceil() as usize;
    root.next_power_of_two().max(32)
}

impl<T: Real> ScanDecays<T> {
    pub(crate) fn new(values: &[T], scale: T) -> Self {
        let n = values.len();
        let block = scan_block(n);
        let step = values.windows(2).map(|w| (scale * (w[0] - w[1])).exp()).collect();
        let (mut prefix_fix, mut suffix_fix) = (Vec::new(), Vec::new());
        if n > block {
            prefix_fix = (0..n)
                .map(|i| match i / block {
                    0 => T::zero(),
                    b => (scale * (values[b * block - 1] - values[i])).exp(),
                })
                .collect();
            let last = (n - 1) / block;
            suffix_fix = (0..n)
                .map(|i| match i / block {
                    b if b == last => T::zero(),
                    b => (scale * (values[i] - values[(b + 1) * block])).exp(),
                })
                .collect();
        }
        Self {
            step,
            block,
            prefix_fix,
            suffix_fix,
        }
    }

    pub(crate) fn step(&self) -> &[T] {
        &self.step
    }

    fn blocked(&self, len: usize) -> bool {
        len > self.block
    }
}

fn local_prefix<T: Real>(step: &[T], buf: &mut [T]) {
    for i in 1..buf.len() {
        let carry = step[i - 1] * buf[i - 1];
        buf[i] += carry;
    }
}

fn local_suffix<T: Real>(step: &[T], buf: &mut [T]) {
    for i in (0..buf.len().saturating_sub(1)).rev() {
        let carry = step[i] * buf[i + 1];
        buf[i] += carry;
    }
}

/// Whether a blocked scan of `len` entries is spread over the pool. Otherwise
/// each block is fixed up right after its local scan, while still in cache;
/// the arithmetic is the same either way, so results do not depend on this.
fn split_over_pool(len: usize) -> bool {
    #[cfg(feature = "parallel")]
    {
        len >= PARALLEL_SCAN_MIN && rayon::current_num_threads() > 1
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = len;
        false
    }
}

/// Runs `f(block_index, block)` over the fixed blocks of `buf` on the pool.
fn par_blocks<T: Real>(buf: &mut [T], block: usize, f: impl Fn(usize, &mut [T]) + Sync + Send) {
    #[cfg(feature = "parallel")]
    buf.par_chunks_mut(block).enumerate().for_each(|(b, chunk)| f(b, chunk));
    #[cfg(not(feature = "parallel"))]
    buf.chunks_mut(block).enumerate().for_each(|(b, chunk)| f(b, chunk));
}

/// In-place `t_i = Σ_{j ≤ i} exp(s(v_j − v_i)) p_j` over sorted order.
pub(crate) fn prefix_scan_in_place<T: Real>(decays: &ScanDecays<T>, buf: &mut [T]) {
    debug_assert_eq!(decays.step.len() + 1, buf.len().max(1));
    if !decays.blocked(buf.len()) {
        local_prefix(&decays.step, buf);
        return;
    }
    let block = decays.block;
    let step = &decays.step;
    let fix = &decays.prefix_fix;
    let local = |b: usize, chunk: &mut [T]| {
        let start = b * block;
        local_prefix(&step[start..(start + chunk.len()).min(step.len())], chunk)
    };
    if !split_over_pool(buf.len()) {
        let mut carry = T::zero();
        for (b, chunk) in buf.chunks_mut(block).enumerate() {
            local(b, chunk);
            if b > 0 {
                let start = b * block;
                for (v, &f) in chunk.iter_mut().zip(&fix[start..]) {
                    *v += f * carry;
                }
            }
            carry = chunk[chunk.len() - 1];
        }
        return;
    }
    par_blocks(buf, block, local);
    let blocks = buf.len().div_ceil(block);
    let mut ends = Vec::with_capacity(blocks);
    ends.push(buf[block - 1]);
    for b in 1..blocks {
        let e = ((b + 1) * block).min(buf.len()) - 1;
        let carried = fix[e] * ends[b - 1];
        ends.push(buf[e] + carried);
    }
    par_blocks(buf, block, |b, chunk| {
        if b > 0 {
            let start = b * block;
            for (v, &f) in chunk.iter_mut().zip(&fix[start..]) {
                *v += f * ends[b - 1];
            }
        }
    });
}

/// In-place `s_i = Σ_{j ≥ i} exp(s(v_i − v_j)) p_j` over sorted order.
pub(crate) fn suffix_scan_in_place<T: Real>(decays: &ScanDecays<T>, buf: &mut [T]) {
    debug_assert_eq!(decays.step.len() + 1, buf.len().max(1));
    if !decays.blocked(buf.len()) {
        local_suffix(&decays.step, buf);
        return;
    }
    let block = decays.block;
    let step = &decays.step;
    let fix = &decays.suffix_fix;
    let local = |b: usize, chunk: &mut [T]| {
        let start = b * block;
        local_suffix(&step[start..(start + chunk.len()).min(step.len())], chunk)
    };
    let blocks = buf.len().div_ceil(block);
    if !split_over_pool(buf.len()) {
        let mut carry = T::zero();
        for (b, chunk) in buf.chunks_mut(block).enumerate().rev() {
            local(b, chunk);
            if b + 1 < blocks {
                let start = b * block;
                for (v, &f) in chunk.iter_mut().zip(&fix[start..]) {
                    *v += f * carry;
                }
            }
            carry = chunk[0];
        }
        return;
    }
    par_blocks(buf, block, local);
    // starts[b] = true suffix value at the first entry of block b.
    let mut starts = vec![T::zero(); blocks];
    starts[blocks - 1] = buf[(blocks - 1) * block];
    for b in (0..blocks - 1).rev() {
        let s = b * block;
        let carried = fix[s] * starts[b + 1];
        starts[b] = buf[s] + carried;
    }
    par_blocks(buf, block, |b, chunk| {
        if b + 1 < blocks {
            let start = b * block;
            for (v, &f) in chunk.iter_mut().zip(&fix[start..]) {
                *v += f * starts[b + 1];
            }
        }
    });
}

/// `t_i = Σ_{j ≤ i} exp(a_j − a_i) payload_j` in sorted order.
pub fn prefix_decay_scan<T: Real>(anchors: &SortedAnchors<T>, payload: &[T]) -> Result<Vec<T>> {
    check_len("prefix scan payload", anchors.len(), payload.len())?;
    let mut out = payload.to_vec();
    prefix_scan_in_place(&anchors.decays, &mut out);
    Ok(out)
}

/// `s_i = Σ_{j ≥ i} exp(a_i − a_j) payload_j` in sorted order.
pub fn suffix_decay_scan<T: Real>(anchors: &SortedAnchors<T>, payload: &[T]) -> Result<Vec<T>> {
    check_len("suffix scan payload", anchors.len(), payload.len())?;
    let mut out = payload.to_vec();
    suffix_scan_in_place(&anchors.decays, &mut out);
    Ok(out)
}

/// `y = K x` with `K_ij = exp(−|a_i − a_j|)`, both vectors in sorted order.
///
/// The diagonal appears in both scans and is removed once.
pub fn symmetric_matvec<T: Real>(anchors: &SortedAnchors<T>, x: &[T]) -> Result<Vec<T>> {
    check_len("symmetric matvec input", anchors.len(), x.len())?;
    let mut lower = x.to_vec();
    prefix_scan_in_place(&anchors.decays, &mut lower);
    let mut upper = x.to_vec();
    suffix_scan_in_place(&anchors.decays, &mut upper);
    Ok(lower
        .into_iter()
        .zip(upper)
        .zip(x)
        .map(|((l, u), &d)| l + u - d)
        .collect())
}
