//! The implicit Laplace operator `A_ij = exp(−|a_i − b_j| / t) · cos(φ_i − ψ_j)`.
//!
//! Both anchor sets are sorted once at construction, temperature is folded in
//! by dividing the anchors by `t`, and every element of one side is located
//! between its two neighbours on the other side by a linear merge. A product
//! then costs one scatter into `O(min(n, k))` buckets plus two decay scans
//! along the shorter axis; nothing of size `n × k` is ever formed.
//!
//! Bucket convention: an anchor `b` is attached to its neighbours
//! `a_below ≤ b < a_above`, so every aggregation factor `exp(a_below − b)` and
//! `exp(b − a_above)` is at most one, and ties fall on the `≤` side.

use nalgebra::DMatrix;

use crate::error::{check_len, Error, Result};
use crate::instrument::bump;
#[allow(unused_imports)]
use crate::par::*;
use crate::real::{all_finite, Real};
use crate::scan::{prefix_scan_in_place, suffix_scan_in_place, SortedAnchors};

/// Which axis the scans run along.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Dispatch {
    /// Scan along the shorter of the two axes.
    #[default]
    Auto,
    /// Always scan along the row anchors `a` (aggregate the columns into row buckets).
    ScanRows,
    /// Always scan along the column anchors `b` (read rows off the column scans).
    ScanColumns,
}

/// One anchor axis, sorted, with its position relative to the other axis.
#[derive(Clone, Debug)]
pub(crate) struct Side<T> {
    pub(crate) anchors: SortedAnchors<T>,
    /// `counts[s] = #{other anchors ≤ self[s]}` (sorted indices).
    pub(crate) counts: Vec<usize>,
    /// `exp(other[counts[s] − 1] − self[s])`, zero when no such neighbour.
    pub(crate) below: Vec<T>,
    /// `exp(self[s] − other[counts[s]])`, zero when no such neighbour.
    pub(crate) above: Vec<T>,
}

impl<T: Real> Side<T> {
    fn locate(anchors: SortedAnchors<T>, other: &SortedAnchors<T>) -> Self {
        let me = anchors.values();
        let them = other.values();
        let mut counts = Vec::with_capacity(me.len());
        let mut below = Vec::with_capacity(me.len());
        let mut above = Vec::with_capacity(me.len());
        let mut c = 0usize;
        for &v in me {
            while c < them.len() && them[c] <= v {
                c += 1;
            }
            counts.push(c);
            below.push(if c >= 1 {
                (them[c - 1] - v).exp()
            } else {
                T::zero()
            });
            above.push(if c < them.len() {
                (v - them[c]).exp()
            } else {
                T::zero()
            });
        }
        Self {
            anchors,
            counts,
            below,
            above,
        }
    }

    pub(crate) fn len(&self) -> usize {
        self.anchors.len()
    }
}

/// Row and column phase vectors, caller order.
#[derive(Clone, Debug, PartialEq)]
pub struct Phases<T> {
    pub row: Vec<T>,
    pub col: Vec<T>,
}

/// Implicit `n × k` Laplace kernel on learnable 1-D anchors.
#[derive(Clone, Debug)]
pub struct LaplexOperator<T> {
    pub(crate) rows: Side<T>,
    pub(crate) cols: Side<T>,
    row_raw: Vec<T>,
    col_raw: Vec<T>,
    temperature: T,
    phases: Option<Phases<T>>,
    dispatch: Dispatch,
}

/// Explicit `n × n` weighted Gram matrix `A · diag(D) · Aᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct GramResult<T: Real> {
    pub matrix: DMatrix<T>,
}

impl<T: Real> LaplexOperator<T> {
    pub fn new(row_anchors: &[T], col_anchors: &[T], temperature: T) -> Result<Self> {
        if !(temperature.is_finite() && temperature > T::zero()) {
            return Err(Error::InvalidTemperature(temperature.as_f64()));
        }
        let rows = SortedAnchors::new_scaled(row_anchors, temperature)?;
        let cols = SortedAnchors::new_scaled(col_anchors, temperature)?;
        let row_side = Side::locate(rows.clone(), &cols);
        let col_side = Side::locate(cols, &rows);
        Ok(Self {
            rows: row_side,
            cols: col_side,
            row_raw: row_anchors.to_vec(),
            col_raw: col_anchors.to_vec(),
            temperature,
            phases: None,
            dispatch: Dispatch::Auto,
        })
    }

    /// Attaches row phases `φ` (length n) and column phases `ψ` (length k).
    pub fn with_phases(mut self, row: &[T], col: &[T]) -> Result<Self> {
        check_len("row phases", self.n(), row.len())?;
        check_len("column phases", self.k(), col.len())?;
        if !all_finite(row) || !all_finite(col) {
            return Err(Error::NonFinite("phases"));
        }
        self.phases = Some(Phases {
            row: row.to_vec(),
            col: col.to_vec(),
        });
        Ok(self)
    }

    pub fn with_dispatch(mut self, dispatch: Dispatch) -> Self {
        self.dispatch = dispatch;
        self
    }

    /// Number of rows (length of `a`).
    pub fn n(&self) -> usize {
        self.rows.len()
    }

    /// Number of columns (length of `b`).
    pub fn k(&self) -> usize {
        self.cols.len()
    }

    pub fn temperature(&self) -> T {
        self.temperature
    }

    pub fn row_anchors(&self) -> &[T] {
        &self.row_raw
    }

    pub fn col_anchors(&self) -> &[T] {
        &self.col_raw
    }

    pub fn phases(&self) -> Option<&Phases<T>> {
        self.phases.as_ref()
    }

    pub fn dispatch(&self) -> Dispatch {
        self.dispatch
    }

    /// Role-swapped operator `k × n` with entries `A_ji`.
    pub fn transposed(&self) -> Self {
        Self {
            rows: self.cols.clone(),
            cols: self.rows.clone(),
            row_raw: self.col_raw.clone(),
            col_raw: self.row_raw.clone(),
            temperature: self.temperature,
            phases: self.phases.as_ref().map(|p| Phases {
                row: p.col.clone(),
                col: p.row.clone(),
            }),
            dispatch: match self.dispatch {
                Dispatch::Auto => Dispatch::Auto,
                Dispatch::ScanRows => Dispatch::ScanColumns,
                Dispatch::ScanColumns => Dispatch::ScanRows,
            },
        }
    }

    /// Same anchors and temperature with the phases dropped.
    pub fn unphased(&self) -> Self {
        let mut op = self.clone();
        op.phases = None;
        op
    }

    /// Single kernel entry in caller indexing, evaluated directly.
    pub fn entry(&self, i: usize, j: usize) -> T {
        let t = self.temperature;
        let base = (-((self.row_raw[i] / t) - (self.col_raw[j] / t)).abs()).exp();
        match &self.phases {
            Some(p) => base * (p.row[i] - p.col[j]).cos(),
            None => base,
        }
    }

    fn scan_output(&self, out_is_rows: bool) -> bool {
        match (self.dispatch, out_is_rows) {
            (Dispatch::Auto, true) => self.n() <= self.k(),
            (Dispatch::Auto, false) => self.k() <= self.n(),
            (Dispatch::ScanRows, rows) => rows,
            (Dispatch::ScanColumns, rows) => !rows,
        }
    }

    fn require_unphased(&self) -> Result<()> {
        if self.phases.is_some() {
            return Err(Error::PhasePresent);
        }
        Ok(())
    }

    /// `y = A x` for the unphased kernel; `x` has length k, `y` length n.
    pub fn matvec(&self, x: &[T]) -> Result<Vec<T>> {
        self.require_unphased()?;
        check_len("matvec input", self.k(), x.len())?;
        if !all_finite(x) {
            return Err(Error::NonFinite("matvec input"));
        }
        bump(|c| c.plain_matvecs += 1);
        Ok(self.plain_apply(true, x))
    }

    /// `y = Aᵀ g`; `g` has length n, `y` length k.
    pub fn matvec_transpose(&self, g: &[T]) -> Result<Vec<T>> {
        self.require_unphased()?;
        check_len("transpose matvec input", self.n(), g.len())?;
        if !all_finite(g) {
            return Err(Error::NonFinite("transpose matvec input"));
        }
        bump(|c| c.plain_matvecs += 1);
        Ok(self.plain_apply(false, g))
    }

    /// Row-wise `Y = X Aᵀ` for a row-major `batch × k` input; returns row-major
    /// `batch × n`. Sorting and bucket positions are shared by every row.
    pub fn batch_matvec(&self, x: &[T], batch: usize) -> Result<Vec<T>> {
        self.require_unphased()?;
        self.batch_apply(true, x, batch)
    }

    /// Row-wise `Y = G A` for a row-major `batch × n` input; returns row-major
    /// `batch × k`.
    pub fn batch_matvec_transpose(&self, g: &[T], batch: usize) -> Result<Vec<T>> {
        self.require_unphased()?;
        self.batch_apply(false, g, batch)
    }

    fn batch_apply(&self, out_is_rows: bool, x: &[T], batch: usize) -> Result<Vec<T>> {
        let (n_out, n_in) = if out_is_rows {
            (self.n(), self.k())
        } else {
            (self.k(), self.n())
        };
        check_len("batch input", batch * n_in, x.len())?;
        if !all_finite(x) {
            return Err(Error::NonFinite("batch input"));
        }
        bump(|c| c.plain_matvecs += batch as u64);
        let mut out = vec![T::zero(); batch * n_out];
        if batch == 0 {
            return Ok(out);
        }
        par_chunks_mut!(out, n_out)
            .enumerate()
            .for_each(|(r, row)| {
                self.plain_apply_into(out_is_rows, &x[r * n_in..(r + 1) * n_in], row);
            });
        Ok(out)
    }

    /// Unchecked, uncounted product in caller order.
    pub(crate) fn plain_apply(&self, out_is_rows: bool, x: &[T]) -> Vec<T> {
        let n_out = if out_is_rows { self.n() } else { self.k() };
        let mut y = vec![T::zero(); n_out];
        self.plain_apply_into(out_is_rows, x, &mut y);
        y
    }

    fn plain_apply_into(&self, out_is_rows: bool, x: &[T], y: &mut [T]) {
        let (out, inp) = if out_is_rows {
            (&self.rows, &self.cols)
        } else {
            (&self.cols, &self.rows)
        };
        let xs = inp.anchors.gather(x);
        let split = apply_sorted(out, inp, &xs, self.scan_output(out_is_rows));
        out.anchors.scatter_sum_into(&split.left, &split.right, y);
    }

    /// Sorted-order split of `A x` into contributions from inputs left and
    /// right of each output anchor.
    pub(crate) fn split_apply(&self, out_is_rows: bool, xs_sorted: &[T]) -> SplitProduct<T> {
        let (out, inp) = if out_is_rows {
            (&self.rows, &self.cols)
        } else {
            (&self.cols, &self.rows)
        };
        apply_sorted(out, inp, xs_sorted, self.scan_output(out_is_rows))
    }

    /// `y_i = Σ_j exp(−|a_i − b_j|/t) cos(φ_i − ψ_j) x_j` via two plain products.
    pub fn phased_matvec(&self, x: &[T]) -> Result<Vec<T>> {
        self.phased_apply(true, x)
    }

    /// Transpose of [`LaplexOperator::phased_matvec`].
    pub fn phased_matvec_transpose(&self, g: &[T]) -> Result<Vec<T>> {
        self.phased_apply(false, g)
    }

    fn phased_apply(&self, out_is_rows: bool, x: &[T]) -> Result<Vec<T>> {
        let p = self.phases.as_ref().ok_or(Error::PhaseAbsent)?;
        let (out_ph, in_ph) = if out_is_rows {
            (&p.row, &p.col)
        } else {
            (&p.col, &p.row)
        };
        check_len("phased matvec input", in_ph.len(), x.len())?;
        if !all_finite(x) {
            return Err(Error::NonFinite("phased matvec input"));
        }
        bump(|c| {
            c.phased_matvecs += 1;
            c.plain_matvecs += 2;
        });
        let xc: Vec<T> = x.iter().zip(in_ph).map(|(&v, &ph)| v * ph.cos()).collect();
        let xs: Vec<T> = x.iter().zip(in_ph).map(|(&v, &ph)| v * ph.sin()).collect();
        let pc = self.plain_apply(out_is_rows, &xc);
        let ps = self.plain_apply(out_is_rows, &xs);
        Ok(out_ph
            .iter()
            .zip(pc.iter().zip(&ps))
            .map(|(&ph, (&c, &s))| ph.cos() * c + ph.sin() * s)
            .collect())
    }

    /// Dispatches to the plain or phased product.
    pub fn apply(&self, x: &[T]) -> Result<Vec<T>> {
        if self.phases.is_some() {
            self.phased_matvec(x)
        } else {
            self.matvec(x)
        }
    }

    /// Dispatches to the plain or phased transpose product.
    pub fn apply_transpose(&self, g: &[T]) -> Result<Vec<T>> {
        if self.phases.is_some() {
            self.phased_matvec_transpose(g)
        } else {
            self.matvec_transpose(g)
        }
    }

    /// Exact `M = A · diag(D) · Aᵀ` for the unphased kernel in
    /// `O(n² + k)` once the operator is built.
    pub fn weighted_gram(&self, d: &[T]) -> Result<GramResult<T>> {
        self.require_unphased()?;
        check_len("gram weights", self.k(), d.len())?;
        if !all_finite(d) {
            return Err(Error::NonFinite("gram weights"));
        }
        bump(|c| c.plain_grams += 1);
        Ok(GramResult {
            matrix: self.plain_gram(d),
        })
    }

    /// Phased Gram from three plain Grams with weights `c²D`, `csD`, `s²D`.
    pub fn phased_gram(&self, d: &[T]) -> Result<GramResult<T>> {
        let p = self.phases.as_ref().ok_or(Error::PhaseAbsent)?;
        check_len("gram weights", self.k(), d.len())?;
        if !all_finite(d) {
            return Err(Error::NonFinite("gram weights"));
        }
        bump(|c| {
            c.phased_grams += 1;
            c.plain_grams += 3;
        });
        let mut dcc = Vec::with_capacity(d.len());
        let mut dcs = Vec::with_capacity(d.len());
        let mut dss = Vec::with_capacity(d.len());
        for (&w, &psi) in d.iter().zip(&p.col) {
            let (s, c) = psi.sin_cos();
            dcc.push(c * c * w);
            dcs.push(c * s * w);
            dss.push(s * s * w);
        }
        let gcc = self.plain_gram(&dcc);
        let gcs = self.plain_gram(&dcs);
        let gss = self.plain_gram(&dss);
        let n = self.n();
        let (sin_phi, cos_phi): (Vec<T>, Vec<T>) = p.row.iter().map(|ph| ph.sin_cos()).unzip();
        let mut m = DMatrix::<T>::zeros(n, n);
        for q in 0..n {
            for r in 0..n {
                let (cr, sr, cq, sq) = (cos_phi[r], sin_phi[r], cos_phi[q], sin_phi[q]);
                m[(r, q)] = cr * cq * gcc[(r, q)]
                    + (cr * sq + sr * cq) * gcs[(r, q)]
                    + sr * sq * gss[(r, q)];
            }
        }
        Ok(GramResult { matrix: m })
    }

    /// Dispatches to the plain or phased Gram.
    pub fn gram(&self, d: &[T]) -> Result<GramResult<T>> {
        if self.phases.is_some() {
            self.phased_gram(d)
        } else {
            self.weighted_gram(d)
        }
    }

    fn plain_gram(&self, d: &[T]) -> DMatrix<T> {
        let n = self.n();
        let rows = &self.rows;
        let cols = &self.cols;
        let a = rows.anchors.values();
        let mut left = vec![T::zero(); n];
        let mut right = vec![T::zero(); n];
        let mut mass = vec![T::zero(); n + 1];
        for (t, &orig) in cols.anchors.perm().iter().enumerate() {
            let w = d[orig];
            let c = cols.counts[t];
            if c >= 1 {
                right[c - 1] += w * cols.below[t] * cols.below[t];
            }
            if c < n {
                left[c] += w * cols.above[t] * cols.above[t];
            }
            mass[c] += w;
        }
        let decays2 = rows.anchors.doubled_decays();
        prefix_scan_in_place(&decays2, &mut left);
        suffix_scan_in_place(&decays2, &mut right);
        let mut cum = Vec::with_capacity(n);
        let mut acc = T::zero();
        for &m in &mass[..n] {
            acc += m;
            cum.push(acc);
        }
        let inv = rows.anchors.inverse_perm();
        let (u, v, w) = (&left, &right, &cum);
        let mut out = DMatrix::<T>::zeros(n, n);
        par_chunks_mut!(out.as_mut_slice(), n)
            .enumerate()
            .for_each(|(q, col)| {
                let j0 = inv[q];
                for (p, slot) in col.iter_mut().enumerate() {
                    let i0 = inv[p];
                    let (i, j) = if i0 >= j0 { (i0, j0) } else { (j0, i0) };
                    *slot = (a[j] - a[i]).exp() * (u[j] + (w[i] - w[j]) + v[i]);
                }
            });
        out
    }
}

/// Sorted-order product split by which side of each output anchor the
/// contributing inputs sit on.
pub(crate) struct SplitProduct<T> {
    pub(crate) left: Vec<T>,
    pub(crate) right: Vec<T>,
    /// Whether inputs tied with an output anchor were counted in `left`.
    pub(crate) ties_left: bool,
}

fn apply_sorted<T: Real>(out: &Side<T>, inp: &Side<T>, xs: &[T], scan_output: bool) -> SplitProduct<T> {
    let n = out.len();
    if scan_output {
        // Each input lands in the bucket of its lower neighbour (feeds outputs
        // at or left of it) and of its upper neighbour (feeds outputs right of it).
        let mut down = vec![T::zero(); n];
        let mut up = vec![T::zero(); n];
        for (s, &x) in xs.iter().enumerate() {
            let c = inp.counts[s];
            if c >= 1 {
                down[c - 1] += x * inp.below[s];
            }
            if c < n {
                up[c] += x * inp.above[s];
            }
        }
        suffix_scan_in_place(out.anchors.scan_decays(), &mut down);
        prefix_scan_in_place(out.anchors.scan_decays(), &mut up);
        // `down` holds inputs ≥ the output anchor, `up` those strictly below.
        SplitProduct {
            left: up,
            right: down,
            ties_left: false,
        }
    } else {
        let k = inp.len();
        let mut pre = xs.to_vec();
        prefix_scan_in_place(inp.anchors.scan_decays(), &mut pre);
        let mut suf = xs.to_vec();
        suffix_scan_in_place(inp.anchors.scan_decays(), &mut suf);
        let mut left = Vec::with_capacity(n);
        let mut right = Vec::with_capacity(n);
        for s in 0..n {
            let c = out.counts[s];
            left.push(if c >= 1 {
                out.below[s] * pre[c - 1]
            } else {
                T::zero()
            });
            right.push(if c < k {
                out.above[s] * suf[c]
            } else {
                T::zero()
            });
        }
        SplitProduct {
            left,
            right,
            ties_left: true,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instrument::count_calls;
    use crate::real::rel_l2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense(op: &LaplexOperator<f64>, x: &[f64]) -> Vec<f64> {
        (0..op.n())
            .map(|i| (0..op.k()).map(|j| op.entry(i, j) * x[j]).sum())
            .collect()
    }

    fn random_instance(rng: &mut ChaCha8Rng, n: usize, k: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut a: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let b: Vec<f64> = (0..k)
            .map(|j| {
                if j % 4 == 0 {
                    a[rng.gen_range(0..n)]
                } else {
                    rng.gen_range(-3.5..3.5)
                }
            })
            .collect();
        if n > 2 {
            a[1] = a[0];
        }
        let x = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        (a, b, x)
    }

    #[test]
    fn hand_cases() {
        let op = LaplexOperator::new(&[0.0], &[0.0, 0.0], 1.0).unwrap();
        assert_eq!(op.matvec(&[1.0, 1.0]).unwrap(), vec![2.0]);

        let op = LaplexOperator::new(&[0.0, 2f64.ln()], &[2f64.ln()], 1.0).unwrap();
        let y = op.matvec(&[1.0]).unwrap();
        assert!((y[0] - 0.5).abs() < 1e-15 && (y[1] - 1.0).abs() < 1e-15);

        let op = LaplexOperator::new(&[0.0], &[0.0], 1.0).unwrap();
        assert_eq!(op.matvec_transpose(&[4.0]).unwrap(), vec![4.0]);
    }

    #[test]
    fn both_branches_match_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(n, k) in &[(7, 13), (13, 7), (1, 5), (5, 1), (9, 9)] {
            let (a, b, x) = random_instance(&mut rng, n, k);
            for d in [Dispatch::Auto, Dispatch::ScanRows, Dispatch::ScanColumns] {
                let op = LaplexOperator::new(&a, &b, 0.7).unwrap().with_dispatch(d);
                let y = op.matvec(&x).unwrap();
                assert!(rel_l2(&y, &dense(&op, &x)) < 1e-12, "{n}x{k} {d:?}");
            }
        }
    }

    #[test]
    fn transpose_matches_dense_and_is_involution() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (a, b, _) = random_instance(&mut rng, 16, 5);
        let op = LaplexOperator::new(&a, &b, 1.3).unwrap();
        let g: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y = op.matvec_transpose(&g).unwrap();
        let want: Vec<f64> = (0..5)
            .map(|j| (0..16).map(|i| op.entry(i, j) * g[i]).sum())
            .collect();
        assert!(rel_l2(&y, &want) < 1e-12);
        let tt = op.transposed().transposed();
        let x: Vec<f64> = (0..5).map(|j| j as f64 - 2.0).collect();
        assert_eq!(tt.matvec(&x).unwrap(), op.matvec(&x).unwrap());
        assert_eq!(op.transposed().matvec(&g).unwrap(), y);
    }

    #[test]
    fn batch_is_rowwise_matvec() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (a, b, _) = random_instance(&mut rng, 12, 20);
        let op = LaplexOperator::new(&a, &b, 1.0).unwrap();
        let xs: Vec<f64> = (0..3 * 20).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ys = op.batch_matvec(&xs, 3).unwrap();
        for r in 0..3 {
            assert_eq!(&ys[r * 12..(r + 1) * 12], op.matvec(&xs[r * 20..(r + 1) * 20]).unwrap().as_slice());
        }
        let one = op.batch_matvec(&xs[..20], 1).unwrap();
        assert_eq!(one, op.matvec(&xs[..20]).unwrap());
    }

    #[test]
    fn temperature_folding_is_bitwise() {
        let a = [0.3, -1.2, 2.5, 0.3];
        let b = [1.0, -0.7, 0.3];
        let t = 0.37;
        let x = [0.5, -2.0, 1.5];
        let op_t = LaplexOperator::new(&a, &b, t).unwrap();
        let a1: Vec<f64> = a.iter().map(|v| v / t).collect();
        let b1: Vec<f64> = b.iter().map(|v| v / t).collect();
        let op_1 = LaplexOperator::new(&a1, &b1, 1.0).unwrap();
        assert_eq!(op_t.matvec(&x).unwrap(), op_1.matvec(&x).unwrap());
    }

    #[test]
    fn aggregation_factors_at_most_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (a, b, _) = random_instance(&mut rng, 30, 50);
        let op = LaplexOperator::new(&a, &b, 0.5).unwrap();
        for side in [&op.rows, &op.cols] {
            assert!(side.below.iter().chain(&side.above).all(|&f| (0.0..=1.0).contains(&f)));
        }
    }

    #[test]
    fn errors() {
        assert!(matches!(
            LaplexOperator::new(&[0.0], &[1.0], 0.0),
            Err(Error::InvalidTemperature(_))
        ));
        assert!(matches!(
            LaplexOperator::new(&[0.0], &[1.0], f64::NAN),
            Err(Error::InvalidTemperature(_))
        ));
        let op = LaplexOperator::new(&[0.0, 1.0], &[1.0], 1.0).unwrap();
        assert!(matches!(op.matvec(&[1.0, 2.0]), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(op.matvec(&[f64::NAN]), Err(Error::NonFinite(_))));
        assert_eq!(op.phased_matvec(&[1.0]).unwrap_err(), Error::PhaseAbsent);
        assert_eq!(op.phased_gram(&[1.0]).unwrap_err(), Error::PhaseAbsent);
        let ph = op.clone().with_phases(&[0.0, 0.0], &[0.0]).unwrap();
        assert_eq!(ph.matvec(&[1.0]).unwrap_err(), Error::PhasePresent);
        assert_eq!(ph.weighted_gram(&[1.0]).unwrap_err(), Error::PhasePresent);
        assert!(op.clone().with_phases(&[0.0], &[0.0]).is_err());
    }

    #[test]
    fn gram_small_cases() {
        let op = LaplexOperator::new(&[0.0], &[0.0], 1.0).unwrap();
        assert_eq!(op.weighted_gram(&[3.0]).unwrap().matrix[(0, 0)], 3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (a, b, _) = random_instance(&mut rng, 6, 11);
        let op = LaplexOperator::new(&a, &b, 1.0).unwrap();
        let z = op.weighted_gram(&[0.0; 11]).unwrap();
        assert!(z.matrix.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gram_matches_dense_and_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (a, b, _) = random_instance(&mut rng, 32, 300);
        let d: Vec<f64> = (0..300).map(|_| rng.gen_range(-1.0..2.0)).collect();
        let op = LaplexOperator::new(&a, &b, 0.8).unwrap();
        let m = op.weighted_gram(&d).unwrap().matrix;
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..32 {
            for j in 0..32 {
                let want: f64 = (0..300).map(|t| op.entry(i, t) * d[t] * op.entry(j, t)).sum();
                num += (m[(i, j)] - want).powi(2);
                den += want * want;
                assert_eq!(m[(i, j)], m[(j, i)]);
            }
        }
        assert!((num / den).sqrt() < 1e-10);
    }

    #[test]
    fn phased_special_cases_and_counts() {
        let a = [0.1, -0.4, 0.9];
        let b = [0.0, 0.5, -1.0, 2.0];
        let x = [1.0, -0.5, 0.25, 2.0];
        let op = LaplexOperator::new(&a, &b, 1.0).unwrap();
        let zero = op.clone().with_phases(&[0.0; 3], &[0.0; 4]).unwrap();
        let (y, counts) = count_calls(|| zero.phased_matvec(&x).unwrap());
        assert_eq!(counts.plain_matvecs, 2);
        assert_eq!(counts.phased_matvecs, 1);
        assert!(rel_l2(&y, &op.matvec(&x).unwrap()) < 1e-15);

        let quarter = op
            .clone()
            .with_phases(&[std::f64::consts::FRAC_PI_2; 3], &[0.0; 4])
            .unwrap();
        assert!(quarter.phased_matvec(&x).unwrap().iter().all(|v| v.abs() < 1e-15));

        let d = [1.0, 0.5, 2.0, -0.3];
        let (g, counts) = count_calls(|| zero.phased_gram(&d).unwrap());
        assert_eq!(counts.plain_grams, 3);
        assert_eq!(counts.gram_requests(), 1);
        let plain = op.weighted_gram(&d).unwrap();
        assert!((g.matrix - plain.matrix).norm() < 1e-14);
    }
}
