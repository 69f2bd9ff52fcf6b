mod common;

use laplex::baselines::{fft, rff_grad_estimate, rff_matvec_estimate, rff_sample, toeplitz_fft_matvec, UniformGridSpec};
use laplex::gradients::matvec_vjp;
use laplex::limits::{countsketch_apply, countsketch_via_laplex, HashRouting};
use laplex::real::rel_l2;
use laplex::LaplexOperator;
use num_complex::Complex;
use rand::Rng;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

#[test]
fn fft_matches_direct_dft_and_round_trips() {
    let mut rng = common::rng(1);
    for log in 0..=8 {
        let n = 1usize << log;
        let v: Vec<Complex<f64>> = (0..n).map(|_| Complex::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let f = fft(&v, false).unwrap();
        for (kk, fk) in f.iter().enumerate() {
            let want: Complex<f64> = v
                .iter()
                .enumerate()
                .map(|(j, x)| x * Complex::from_polar(1.0, -std::f64::consts::TAU * (j * kk % n) as f64 / n as f64))
                .sum();
            assert!((fk - want).norm() <= 1e-10 * (n as f64));
        }
        let back = fft(&f, true).unwrap();
        for (b, x) in back.iter().zip(&v) {
            assert!((b - x).norm() <= 1e-12);
        }
    }
}

#[test]
fn toeplitz_agrees_with_scans_on_uniform_grids() {
    let mut rng = common::rng(2);
    for log in 8..=12 {
        let n = 1usize << log;
        let grid = UniformGridSpec::new(n, 0.37).unwrap();
        let anchors = grid.anchors();
        let x = common::signal(&mut rng, n);
        let fast = toeplitz_fft_matvec(&grid, &x).unwrap();
        let scan = LaplexOperator::new(&anchors, &anchors, 1.0).unwrap().matvec(&x).unwrap();
        assert!(rel_l2(&fast, &scan) <= 1e-10);
    }
}

fn rff_value_error(n: usize, features: usize, seed: u64, average: usize) -> f64 {
    let mut rng = common::rng(1000 + n as u64);
    let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect();
    let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect();
    let x = common::signal(&mut rng, n);
    let exact = LaplexOperator::new(&a, &b, 1.0).unwrap().matvec(&x).unwrap();
    let mut est = vec![0.0; n];
    for r in 0..average {
        let f = rff_sample(features, seed * 1000 + r as u64).unwrap();
        for (e, v) in est.iter_mut().zip(rff_matvec_estimate(&f, &a, &b, &x).unwrap()) {
            *e += v / average as f64;
        }
    }
    rel_l2(&est, &exact)
}

#[test]
fn rff_averaging_reduces_value_error() {
    let single = median((0..10).map(|s| rff_value_error(256, 64, s, 1)).collect());
    let averaged = median((0..10).map(|s| rff_value_error(256, 64, s, 64)).collect());
    assert!(single / averaged >= 4.0, "{single} / {averaged}");
}

fn rff_b_grad_error(n: usize, features: usize, seed: u64) -> f64 {
    let mut rng = common::rng(2000 + n as u64);
    let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect();
    let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect();
    let x = common::signal(&mut rng, n);
    let g = common::signal(&mut rng, n);
    let exact = matvec_vjp(&LaplexOperator::new(&a, &b, 1.0).unwrap(), &x, &g).unwrap().b_bar;
    let f = rff_sample(features, seed).unwrap();
    rel_l2(&rff_grad_estimate(&f, &a, &b, &x, &g).unwrap().1, &exact)
}

#[test]
fn rff_gradient_does_not_concentrate() {
    let value = |d| median((0..10).map(|s| rff_value_error(256, d, s, 1)).collect());
    let grad = |d| median((0..10).map(|s| rff_b_grad_error(256, d, s)).collect());
    let value_gain = value(64) / value(1024);
    let grad_gain = grad(64) / grad(1024);
    assert!(grad_gain < value_gain, "gradient gain {grad_gain} vs value gain {value_gain}");
    assert!(grad_gain < 4.0);
}

#[test]
fn random_countsketch_routings_match() {
    let mut rng = common::rng(3);
    for s in 0..100 {
        let n_in = rng.gen_range(1..200);
        let m_out = rng.gen_range(1..32);
        let r = HashRouting::random(n_in, m_out, s).unwrap();
        let x = common::signal(&mut rng, n_in);
        let want = countsketch_apply(&r, &x).unwrap();
        let got = countsketch_via_laplex(&r, &x, 0.01).unwrap();
        let scale = x.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
        for (u, v) in got.iter().zip(&want) {
            assert!((u - v).abs() <= 1e-12 * scale);
        }
    }
}
