//! Vector–Jacobian products for the Laplace operator.
//!
//! For `L = gᵀ A x` with `A_ij = exp(−|a_i − b_j|/t)`,
//! `∂L/∂a_i = (g_i/t)(Σ_{b_j > a_i} A_ij x_j − Σ_{b_j < a_i} A_ij x_j)` and
//! symmetrically for `b`. Both one-sided sums come out of the same scans the
//! forward product uses. Tied pairs `a_i = b_j` use the subgradient `sign(0) = 0`.

use nalgebra::DMatrix;

use crate::error::{check_len, Error, Result};
use crate::ops::LaplexOperator;
#[allow(unused_imports)]
use crate::par::*;
use crate::real::{all_finite, Real};

/// Input cotangents of a (phased) matvec, all in caller order.
#[derive(Clone, Debug, PartialEq)]
pub struct MatvecCotangents<T> {
    pub x_bar: Vec<T>,
    pub a_bar: Vec<T>,
    pub b_bar: Vec<T>,
    pub phi_bar: Option<Vec<T>>,
    pub psi_bar: Option<Vec<T>>,
}

fn check_forward<T: Real>(op: &LaplexOperator<T>, x: &[T], g: &[T]) -> Result<()> {
    check_len("vjp input", op.k(), x.len())?;
    check_len("vjp cotangent", op.n(), g.len())?;
    if !all_finite(x) {
        return Err(Error::NonFinite("vjp input"));
    }
    if !all_finite(g) {
        return Err(Error::NonFinite("vjp cotangent"));
    }
    Ok(())
}

/// Gradient of `cotᵀ A x` with respect to the anchors of the output side,
/// where `x` lives on the other side. Caller order in and out.
fn anchor_grad<T: Real>(op: &LaplexOperator<T>, out_is_rows: bool, x: &[T], cot: &[T]) -> Vec<T> {
    let (out, inp) = if out_is_rows {
        (&op.rows, &op.cols)
    } else {
        (&op.cols, &op.rows)
    };
    let xs = inp.anchors.gather(x);
    let split = op.split_apply(out_is_rows, &xs);
    let in_vals = inp.anchors.values();
    let inv_t = T::one() / op.temperature();
    let mut grad_sorted = Vec::with_capacity(out.len());
    for (s, &v) in out.anchors.values().iter().enumerate() {
        let le = out.counts[s];
        let lt = in_vals[..le].partition_point(|&w| w < v);
        let mut ties = T::zero();
        for &xv in &xs[lt..le] {
            ties += xv;
        }
        let (left, right) = if split.ties_left {
            (split.left[s] - ties, split.right[s])
        } else {
            (split.left[s], split.right[s] - ties)
        };
        grad_sorted.push((right - left) * inv_t);
    }
    let mut grad = out.anchors.scatter(&grad_sorted);
    for (gv, &c) in grad.iter_mut().zip(cot) {
        *gv *= c;
    }
    grad
}

/// Cotangents of `L = gᵀ · matvec(op, x)`.
pub fn matvec_vjp<T: Real>(op: &LaplexOperator<T>, x: &[T], g: &[T]) -> Result<MatvecCotangents<T>> {
    if op.phases().is_some() {
        return Err(Error::PhasePresent);
    }
    check_forward(op, x, g)?;
    Ok(MatvecCotangents {
        x_bar: op.matvec_transpose(g)?,
        a_bar: anchor_grad(op, true, x, g),
        b_bar: anchor_grad(op, false, g, x),
        phi_bar: None,
        psi_bar: None,
    })
}

/// Cotangents of `L = gᵀ · phased_matvec(op, x)`, including both phase vectors.
pub fn phased_matvec_vjp<T: Real>(op: &LaplexOperator<T>, x: &[T], g: &[T]) -> Result<MatvecCotangents<T>> {
    let phases = op.phases().ok_or(Error::PhaseAbsent)?;
    check_forward(op, x, g)?;
    let (sin_psi, cos_psi): (Vec<T>, Vec<T>) = phases.col.iter().map(|p| p.sin_cos()).unzip();
    let (sin_phi, cos_phi): (Vec<T>, Vec<T>) = phases.row.iter().map(|p| p.sin_cos()).unzip();
    let hadamard = |u: &[T], v: &[T]| -> Vec<T> { u.iter().zip(v).map(|(&a, &b)| a * b).collect() };

    let xc = hadamard(&cos_psi, x);
    let xs = hadamard(&sin_psi, x);
    let gc = hadamard(&cos_phi, g);
    let gs = hadamard(&sin_phi, g);
    let p = op.plain_apply(true, &xc);
    let q = op.plain_apply(true, &xs);
    let pt = op.plain_apply(false, &gc);
    let qt = op.plain_apply(false, &gs);

    let phi_bar = (0..op.n())
        .map(|i| g[i] * (cos_phi[i] * q[i] - sin_phi[i] * p[i]))
        .collect();
    let psi_bar = (0..op.k())
        .map(|j| x[j] * (cos_psi[j] * qt[j] - sin_psi[j] * pt[j]))
        .collect();
    let x_bar = (0..op.k())
        .map(|j| cos_psi[j] * pt[j] + sin_psi[j] * qt[j])
        .collect();
    let add = |u: Vec<T>, v: Vec<T>| -> Vec<T> { u.into_iter().zip(v).map(|(a, b)| a + b).collect() };
    let a_bar = add(anchor_grad(op, true, &xc, &gc), anchor_grad(op, true, &xs, &gs));
    let b_bar = add(anchor_grad(op, false, &gc, &xc), anchor_grad(op, false, &gs, &xs));
    Ok(MatvecCotangents {
        x_bar,
        a_bar,
        b_bar,
        phi_bar: Some(phi_bar),
        psi_bar: Some(psi_bar),
    })
}

/// Gradient of `⟨G̅, A diag(D) Aᵀ⟩` with respect to `D`: `D̅_t = (Aᵀ G̅ A)_tt`.
///
/// Works for plain and phased operators. `Z = Aᵀ G̅` is formed with `n`
/// transpose products, then each `D̅_t` contracts column `t` of `Z` with column
/// `t` of `A` evaluated entrywise, `O(n k)` in total.
pub fn gram_vjp_weights<T: Real>(op: &LaplexOperator<T>, d: &[T], g_bar: &DMatrix<T>) -> Result<Vec<T>> {
    let (n, k) = (op.n(), op.k());
    check_len("gram weights", k, d.len())?;
    check_len("gram cotangent rows", n, g_bar.nrows())?;
    check_len("gram cotangent columns", n, g_bar.ncols())?;
    if !g_bar.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("gram cotangent"));
    }
    let scale = g_bar.iter().fold(1.0f64, |m, v| m.max(v.as_f64().abs()));
    let mut asym = 0.0f64;
    for i in 0..n {
        for j in 0..i {
            asym = asym.max((g_bar[(i, j)] - g_bar[(j, i)]).as_f64().abs());
        }
    }
    if asym > 1e-9 * scale {
        return Err(Error::AsymmetricCotangent(asym));
    }

    // z[l·k + t] = (Aᵀ G̅)_{t,l}
    let mut z = vec![T::zero(); n * k];
    par_chunks_mut!(z, k).enumerate().for_each(|(l, zl)| {
        let col: Vec<T> = g_bar.column(l).iter().copied().collect();
        let v = if op.phases().is_some() {
            op.phased_matvec_transpose(&col)
        } else {
            op.matvec_transpose(&col)
        }
        .expect("dimensions checked above");
        zl.copy_from_slice(&v);
    });
    let mut out = vec![T::zero(); k];
    par_iter_mut!(out).enumerate().for_each(|(t, o)| {
        let mut acc = T::zero();
        for l in 0..n {
            acc += op.entry(l, t) * z[l * k + t];
        }
        *o = acc;
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::finite_diff;

    #[test]
    fn zero_cotangent() {
        let op = LaplexOperator::new(&[0.0, 1.0], &[0.5, -1.0, 2.0], 1.0).unwrap();
        let c = matvec_vjp(&op, &[1.0, 2.0, 3.0], &[0.0, 0.0]).unwrap();
        assert!(c.x_bar.iter().chain(&c.a_bar).chain(&c.b_bar).all(|&v| v == 0.0));
    }

    #[test]
    fn single_pair_closed_form() {
        let op = LaplexOperator::new(&[0.0], &[5.0], 1.0).unwrap();
        let c = matvec_vjp(&op, &[1.0], &[1.0]).unwrap();
        let e = (-5.0f64).exp();
        assert!((c.x_bar[0] - e).abs() < 1e-18);
        assert!((c.a_bar[0] - e).abs() < 1e-18);
        assert!((c.b_bar[0] + e).abs() < 1e-18);
    }

    #[test]
    fn tied_pair_has_zero_anchor_gradient() {
        let op = LaplexOperator::new(&[1.0, 2.0], &[1.0], 1.0).unwrap();
        let c = matvec_vjp(&op, &[3.0], &[1.0, 0.0]).unwrap();
        assert_eq!(c.a_bar[0], 0.0);
        assert_eq!(c.b_bar[0], 0.0);
    }

    #[test]
    fn phased_zero_phase_offsets() {
        let op = LaplexOperator::new(&[0.0, 1.0], &[0.5, -1.0], 1.0)
            .unwrap()
            .with_phases(&[0.0, 0.0], &[0.0, 0.0])
            .unwrap();
        let c = phased_matvec_vjp(&op, &[1.0, 2.0], &[0.5, -1.0]).unwrap();
        assert!(c.phi_bar.unwrap().iter().all(|&v| v == 0.0));
        let z = phased_matvec_vjp(&op, &[1.0, 2.0], &[0.0, 0.0]).unwrap();
        assert!(z.a_bar.iter().chain(&z.b_bar).chain(&z.x_bar).all(|&v| v == 0.0));
        assert_eq!(matvec_vjp(&op, &[1.0, 2.0], &[0.0, 0.0]).unwrap_err(), Error::PhasePresent);
    }

    #[test]
    fn gram_vjp_scalar_row() {
        let b = [0.3, -1.0, 2.0];
        let op = LaplexOperator::new(&[0.5], &b, 0.8).unwrap();
        let c = 1.7;
        let g = DMatrix::from_element(1, 1, c);
        let got = gram_vjp_weights(&op, &[1.0; 3], &g).unwrap();
        for t in 0..3 {
            let want = c * (-2.0 * (0.5f64 - b[t]).abs() / 0.8).exp();
            assert!((got[t] - want).abs() < 1e-14);
        }
        let zero = gram_vjp_weights(&op, &[1.0; 3], &DMatrix::zeros(1, 1)).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gram_vjp_rejects_asymmetric() {
        let op = LaplexOperator::new(&[0.0, 1.0], &[0.5], 1.0).unwrap();
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(matches!(
            gram_vjp_weights(&op, &[1.0], &g),
            Err(Error::AsymmetricCotangent(_))
        ));
    }

    #[test]
    fn gram_vjp_matches_finite_differences() {
        let a: Vec<f64> = (0..6).map(|i| (i as f64 * 1.7).sin() * 2.0).collect();
        let b: Vec<f64> = (0..9).map(|i| (i as f64 * 0.6).cos() * 2.5).collect();
        let op = LaplexOperator::new(&a, &b, 0.9).unwrap();
        let mut g = DMatrix::from_fn(6, 6, |i, j| ((i * 7 + j * 3) as f64 * 0.31).sin());
        g = &g + g.transpose();
        let d: Vec<f64> = (0..9).map(|t| 0.5 + 0.1 * t as f64).collect();
        let got = gram_vjp_weights(&op, &d, &g).unwrap();
        let f = |w: &[f64]| op.weighted_gram(w).unwrap().matrix.component_mul(&g).sum();
        let fd = finite_diff(f, &d, 1e-6).unwrap();
        assert!(crate::real::rel_l2(&got, &fd) < 1e-6);
    }
}
