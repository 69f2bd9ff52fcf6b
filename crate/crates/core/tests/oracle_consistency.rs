mod common;

use laplex::instrument::count_calls;
use laplex::oracle::{dense_gram, dense_matvec};
use laplex::real::rel_l2;
use laplex::{Dispatch, LaplexOperator};
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use rand::Rng;

fn frobenius_rel(got: &DMatrix<f64>, want: &DMatrix<f64>) -> f64 {
    let denom = want.norm();
    if denom == 0.0 {
        got.norm()
    } else {
        (got - want).norm() / denom
    }
}

#[test]
fn matvec_matches_dense_on_both_branches() {
    let mut rng = common::rng(100);
    for dispatch in [Dispatch::ScanRows, Dispatch::ScanColumns] {
        for _ in 0..200 {
            let n = rng.gen_range(1..=256);
            let k = rng.gen_range(1..=256);
            let t = rng.gen_range(0.1..4.0);
            let a = common::anchors(&mut rng, n, 6.0);
            let b = common::anchors(&mut rng, k, 6.0);
            let x = common::signal(&mut rng, k);
            let g = common::signal(&mut rng, n);
            let op = LaplexOperator::new(&a, &b, t).unwrap().with_dispatch(dispatch);
            let want = dense_matvec(&a, &b, t, None, &x).unwrap();
            assert!(rel_l2(&op.matvec(&x).unwrap(), &want) <= 1e-12);
            let want_t = dense_matvec(&b, &a, t, None, &g).unwrap();
            assert!(rel_l2(&op.matvec_transpose(&g).unwrap(), &want_t) <= 1e-12);
        }
    }
}

#[test]
fn weighted_gram_matches_dense_with_diagonal_identity() {
    let mut rng = common::rng(200);
    for _ in 0..100 {
        let n = rng.gen_range(1..=64);
        let k = rng.gen_range(1..=4096);
        let t = rng.gen_range(0.2..3.0);
        let a = common::anchors(&mut rng, n, 8.0);
        let b = common::anchors(&mut rng, k, 8.0);
        let d = common::signal(&mut rng, k);
        let op = LaplexOperator::new(&a, &b, t).unwrap();
        let m = op.weighted_gram(&d).unwrap().matrix;
        let want = dense_gram(&a, &b, t, None, &d).unwrap();
        assert!(frobenius_rel(&m, &want) <= 1e-10);
        let scale: f64 = d.iter().map(|v| v.abs()).sum();
        for i in 0..n {
            let diag: f64 = b.iter().zip(&d).map(|(&bt, &dt)| dt * (-2.0 * (a[i] - bt).abs() / t).exp()).sum();
            assert!((m[(i, i)] - diag).abs() <= 1e-12 * scale.max(1.0));
        }
        assert_eq!(m, m.transpose());
    }
}

#[test]
fn phased_products_reduce_to_plain_ones() {
    let mut rng = common::rng(300);
    for _ in 0..50 {
        let n = rng.gen_range(1..=48);
        let k = rng.gen_range(1..=96);
        let t = rng.gen_range(0.3..2.0);
        let a = common::anchors(&mut rng, n, 4.0);
        let b = common::anchors(&mut rng, k, 4.0);
        let phi: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let psi: Vec<f64> = (0..k).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let x = common::signal(&mut rng, k);
        let d = common::signal(&mut rng, k);
        let op = LaplexOperator::new(&a, &b, t).unwrap().with_phases(&phi, &psi).unwrap();
        let ph = Some((phi.as_slice(), psi.as_slice()));

        let (y, c) = count_calls(|| op.phased_matvec(&x).unwrap());
        assert_eq!((c.plain_matvecs, c.phased_matvecs), (2, 1));
        assert!(rel_l2(&y, &dense_matvec(&a, &b, t, ph, &x).unwrap()) <= 1e-10);

        let (m, c) = count_calls(|| op.phased_gram(&d).unwrap().matrix);
        assert_eq!((c.plain_grams, c.phased_grams), (3, 1));
        assert!(frobenius_rel(&m, &dense_gram(&a, &b, t, ph, &d).unwrap()) <= 1e-10);
    }
}

#[test]
fn nonnegative_gram_is_positive_semidefinite() {
    let mut rng = common::rng(400);
    for _ in 0..30 {
        let n = rng.gen_range(2..=40);
        let k = rng.gen_range(1..=200);
        let a = common::anchors(&mut rng, n, 5.0);
        let b = common::anchors(&mut rng, k, 5.0);
        let d: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..2.0)).collect();
        let m = LaplexOperator::new(&a, &b, 1.0).unwrap().weighted_gram(&d).unwrap().matrix;
        let eig = SymmetricEigen::new(m.clone());
        let floor = -1e-10 * m.norm().max(1.0);
        assert!(eig.eigenvalues.iter().all(|&l| l >= floor));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matvec_is_linear(seed in any::<u64>(), n in 1usize..64, k in 1usize..64, alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
        let mut rng = common::rng(seed);
        let a = common::anchors(&mut rng, n, 5.0);
        let b = common::anchors(&mut rng, k, 5.0);
        let x = common::signal(&mut rng, k);
        let y = common::signal(&mut rng, k);
        let op = LaplexOperator::new(&a, &b, 1.3).unwrap();
        let mix: Vec<f64> = x.iter().zip(&y).map(|(u, v)| alpha * u + beta * v).collect();
        let lhs = op.matvec(&mix).unwrap();
        let rhs: Vec<f64> = op.matvec(&x).unwrap().iter().zip(op.matvec(&y).unwrap()).map(|(u, v)| alpha * u + beta * v).collect();
        let scale = x.iter().chain(&y).map(|v| v.abs()).sum::<f64>() * (alpha.abs() + beta.abs()) + 1.0;
        for (l, r) in lhs.iter().zip(&rhs) {
            prop_assert!((l - r).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn branches_agree_and_transpose_is_adjoint(seed in any::<u64>(), n in 1usize..80, k in 1usize..80) {
        let mut rng = common::rng(seed);
        let a = common::anchors(&mut rng, n, 5.0);
        let b = common::anchors(&mut rng, k, 5.0);
        let x = common::signal(&mut rng, k);
        let g = common::signal(&mut rng, n);
        let op = LaplexOperator::new(&a, &b, 0.7).unwrap();
        let rows = op.clone().with_dispatch(Dispatch::ScanRows).matvec(&x).unwrap();
        let cols = op.clone().with_dispatch(Dispatch::ScanColumns).matvec(&x).unwrap();
        prop_assert!(rel_l2(&rows, &cols) <= 1e-12);
        let lhs: f64 = g.iter().zip(&rows).map(|(u, v)| u * v).sum();
        let rhs: f64 = op.matvec_transpose(&g).unwrap().iter().zip(&x).map(|(u, v)| u * v).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (n * k) as f64);
    }

    #[test]
    fn batch_rows_equal_single_products(seed in any::<u64>(), n in 1usize..40, k in 1usize..40, batch in 1usize..6) {
        let mut rng = common::rng(seed);
        let a = common::anchors(&mut rng, n, 5.0);
        let b = common::anchors(&mut rng, k, 5.0);
        let xs = common::signal(&mut rng, k * batch);
        let op = LaplexOperator::new(&a, &b, 1.0).unwrap();
        let ys = op.batch_matvec(&xs, batch).unwrap();
        for r in 0..batch {
            let single = op.matvec(&xs[r * k..(r + 1) * k]).unwrap();
            prop_assert_eq!(&ys[r * n..(r + 1) * n], single.as_slice());
        }
    }
}
