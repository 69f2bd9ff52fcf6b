//! Dense reference implementations and central finite differences.
//!
//! Everything here materializes the kernel entry by entry and is therefore
//! quadratic; it exists to check the fast paths, not to be fast. The size cap
//! defaults to 2²⁴ entries and can be changed with the
//! `LAPLEX_ORACLE_MAX_ENTRIES` environment variable.

use nalgebra::DMatrix;

use crate::error::{check_len, Error, Result};
#[allow(unused_imports)]
use crate::par::*;
use crate::real::{all_finite, Real};

pub const ORACLE_CAP_ENV: &str = "LAPLEX_ORACLE_MAX_ENTRIES";
pub const DEFAULT_ORACLE_CAP: usize = 1 << 24;

/// Current oracle size cap in matrix entries.
pub fn oracle_cap() -> usize {
    std::env::var(ORACLE_CAP_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(DEFAULT_ORACLE_CAP)
}

/// Optional `(row, col)` phase vectors.
pub type PhasePair<'a, T> = Option<(&'a [T], &'a [T])>;

/// Explicit `n × k` kernel with entries `exp(−|a_i − b_j|/t) cos(φ_i − ψ_j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseKernel<T: Real> {
    pub matrix: DMatrix<T>,
}

fn check_inputs<T: Real>(a: &[T], b: &[T], t: T, phases: PhasePair<'_, T>) -> Result<()> {
    if !(t.is_finite() && t > T::zero()) {
        return Err(Error::InvalidTemperature(t.as_f64()));
    }
    if !all_finite(a) || !all_finite(b) {
        return Err(Error::NonFinite("oracle anchors"));
    }
    if let Some((phi, psi)) = phases {
        check_len("oracle row phases", a.len(), phi.len())?;
        check_len("oracle column phases", b.len(), psi.len())?;
        if !all_finite(phi) || !all_finite(psi) {
            return Err(Error::NonFinite("oracle phases"));
        }
    }
    Ok(())
}

#[inline]
fn entry<T: Real>(a: &[T], b: &[T], t: T, phases: PhasePair<'_, T>, i: usize, j: usize) -> T {
    let base = (-(a[i] - b[j]).abs() / t).exp();
    match phases {
        Some((phi, psi)) => base * (phi[i] - psi[j]).cos(),
        None => base,
    }
}

pub fn dense_kernel<T: Real>(a: &[T], b: &[T], t: T, phases: PhasePair<'_, T>) -> Result<DenseKernel<T>> {
    let entries = a.len().saturating_mul(b.len());
    let cap = oracle_cap();
    if entries > cap {
        return Err(Error::SizeCapExceeded { entries, cap });
    }
    check_inputs(a, b, t, phases)?;
    Ok(DenseKernel {
        matrix: DMatrix::from_fn(a.len(), b.len(), |i, j| entry(a, b, t, phases, i, j)),
    })
}

pub fn dense_matvec<T: Real>(a: &[T], b: &[T], t: T, phases: PhasePair<'_, T>, x: &[T]) -> Result<Vec<T>> {
    check_len("oracle matvec input", b.len(), x.len())?;
    let k = dense_kernel(a, b, t, phases)?;
    Ok((0..a.len())
        .map(|i| {
            let mut acc = T::zero();
            for (j, &xj) in x.iter().enumerate() {
                acc += k.matrix[(i, j)] * xj;
            }
            acc
        })
        .collect())
}

pub fn dense_gram<T: Real>(a: &[T], b: &[T], t: T, phases: PhasePair<'_, T>, d: &[T]) -> Result<DMatrix<T>> {
    check_len("oracle gram weights", b.len(), d.len())?;
    let k = dense_kernel(a, b, t, phases)?;
    let n = a.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut acc = T::zero();
            for (s, &w) in d.iter().enumerate() {
                acc += k.matrix[(i, s)] * w * k.matrix[(j, s)];
            }
            m[(i, j)] = acc;
            m[(j, i)] = acc;
        }
    }
    Ok(m)
}

/// Row-major `batch × n` product `X Aᵀ`, evaluating each kernel entry on the fly
/// and accumulating in order `j = 0..k`: the arithmetic of a naive matmul against
/// the materialized kernel, in `O(n + k)` memory and without the size cap.
pub fn dense_matvec_streamed<T: Real>(a: &[T], b: &[T], t: T, x: &[T], batch: usize) -> Result<Vec<T>> {
    check_inputs(a, b, t, None)?;
    let (n, k) = (a.len(), b.len());
    check_len("streamed batch input", batch * k, x.len())?;
    let mut out = vec![T::zero(); batch * n];
    par_chunks_mut!(out, batch.max(1)).enumerate().for_each(|(i, ys)| {
        let kernel_row: Vec<T> = b.iter().map(|&bj| (-(a[i] - bj).abs() / t).exp()).collect();
        for (r, y) in ys.iter_mut().enumerate() {
            let xr = &x[r * k..(r + 1) * k];
            let mut acc = T::zero();
            for (&kv, &xv) in kernel_row.iter().zip(xr) {
                acc += kv * xv;
            }
            *y = acc;
        }
    });
    // `out` was filled as n × batch; transpose into batch × n.
    let mut rows = vec![T::zero(); batch * n];
    for i in 0..n {
        for r in 0..batch {
            rows[r * n + i] = out[i * batch + r];
        }
    }
    Ok(rows)
}

/// Central differences `(f(v + h e_i) − f(v − h e_i)) / 2h` per coordinate.
pub fn finite_diff<F>(f: F, v: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!("finite-difference step {h}")));
    }
    let mut probe = v.to_vec();
    let mut grad = Vec::with_capacity(v.len());
    for i in 0..v.len() {
        probe[i] = v[i] + h;
        let up = f(&probe);
        probe[i] = v[i] - h;
        let down = f(&probe);
        probe[i] = v[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite("finite-difference function value"));
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_kernels() {
        let k = dense_kernel(&[0.0], &[0.0], 1.0, None).unwrap();
        assert_eq!(k.matrix[(0, 0)], 1.0);
        let k = dense_kernel(&[0.0, 2f64.ln()], &[0.0], 1.0, None).unwrap();
        assert_eq!(k.matrix[(0, 0)], 1.0);
        assert!((k.matrix[(1, 0)] - 0.5).abs() < 1e-16);
        assert_eq!(dense_matvec(&[0.0], &[0.0], 1.0, None, &[3.0]).unwrap(), vec![3.0]);
    }

    #[test]
    fn one_hot_gram_is_outer_product() {
        let a = [0.0, 0.5, -1.0, 2.0];
        let b = [0.3, -0.2, 1.1];
        let d = [0.0, 1.0, 0.0];
        let m = dense_gram(&a, &b, 1.0, None, &d).unwrap();
        let k = dense_kernel(&a, &b, 1.0, None).unwrap().matrix;
        let col = k.column(1);
        assert!((m - col * col.transpose()).norm() < 1e-15);
    }

    #[test]
    fn row_maxima_only_at_coincident_anchors() {
        let a: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).sin() * 3.0).collect();
        let mut b: Vec<f64> = (0..64).map(|i| (i as f64 * 0.91).cos() * 3.0).collect();
        b[5] = a[10];
        b[40] = a[3];
        let k = dense_kernel(&a, &b, 1.0, None).unwrap().matrix;
        for (i, ai) in a.iter().enumerate() {
            let max = k.row(i).max();
            assert!(max <= 1.0);
            assert_eq!(max == 1.0, b.contains(ai), "row {i}");
        }
    }

    #[test]
    fn size_cap_enforced() {
        let big = vec![0.0f64; 5000];
        assert!(matches!(
            dense_kernel(&big, &big, 1.0, None),
            Err(Error::SizeCapExceeded { .. })
        ));
    }

    #[test]
    fn streamed_matches_materialized() {
        let a = [0.0, 0.5, -1.0];
        let b = [0.3, -0.2, 1.1, 0.0];
        let x = [1.0, -2.0, 0.5, 0.25, 3.0, 1.0, -1.0, 0.0];
        let got = dense_matvec_streamed(&a, &b, 0.9, &x, 2).unwrap();
        for r in 0..2 {
            let want = dense_matvec(&a, &b, 0.9, None, &x[r * 4..(r + 1) * 4]).unwrap();
            assert_eq!(&got[r * 3..(r + 1) * 3], want.as_slice());
        }
    }

    #[test]
    fn finite_differences() {
        let g = finite_diff(|v| 0.5 * v.iter().map(|x| x * x).sum::<f64>(), &[1.0, 2.0], 1e-6).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-8 && (g[1] - 2.0).abs() < 1e-8);
        let g = finite_diff(|_| 4.0, &[1.0, 2.0, 3.0], 1e-6).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        assert!(finite_diff(|_| f64::NAN, &[1.0], 1e-6).is_err());
        assert!(finite_diff(|_| 0.0, &[1.0], 0.0).is_err());
    }
}
