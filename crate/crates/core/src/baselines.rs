//! Comparators for the fast operator: a materialized dense kernel, a
//! Toeplitz–FFT product on uniform grids, and Random Fourier Features with
//! Cauchy frequencies.

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_len, Error, Result};
#[allow(unused_imports)]
use crate::par::*;
use crate::real::{all_finite, Real};

/// Iterative radix-2 DFT. Forward is unnormalized; inverse carries the `1/N`.
pub fn fft<T: Real>(v: &[Complex<T>], inverse: bool) -> Result<Vec<Complex<T>>> {
    let n = v.len();
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::NonPowerOfTwo(n));
    }
    let mut out = v.to_vec();
    let bits = n.trailing_zeros();
    if bits > 0 {
        for i in 0..n {
            let j = i.reverse_bits() >> (usize::BITS - bits);
            if i < j {
                out.swap(i, j);
            }
        }
    }
    let sign = if inverse { T::one() } else { -T::one() };
    // Twiddles for the full length; stage `len` uses every (n/len)-th entry.
    let twiddles: Vec<Complex<T>> = (0..n / 2)
        .map(|k| {
            let theta = sign * T::TAU() * T::of(k as f64) / T::of(n as f64);
            Complex::new(theta.cos(), theta.sin())
        })
        .collect();
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let stride = n / len;
        for chunk in out.chunks_mut(len) {
            let (lo, hi) = chunk.split_at_mut(half);
            for (k, (l, h)) in lo.iter_mut().zip(hi.iter_mut()).enumerate() {
                let t = *h * twiddles[k * stride];
                *h = *l - t;
                *l = *l + t;
            }
        }
        len *= 2;
    }
    if inverse {
        let scale = T::one() / T::of(n as f64);
        for c in &mut out {
            *c = *c * scale;
        }
    }
    Ok(out)
}

/// Uniform grid `a_i = b_i = i·Δ`, on which the Laplace kernel is Toeplitz.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UniformGridSpec {
    pub n: usize,
    pub delta: f64,
}

impl UniformGridSpec {
    pub fn new(n: usize, delta: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyInput("grid"));
        }
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidArgument(format!("grid spacing {delta}")));
        }
        Ok(Self { n, delta })
    }

    pub fn anchors(&self) -> Vec<f64> {
        (0..self.n).map(|i| i as f64 * self.delta).collect()
    }
}

/// Symmetric Toeplitz product via a circulant of size `2^⌈log2(2n−1)⌉` and three FFTs.
pub fn toeplitz_fft_matvec<T: Real>(grid: &UniformGridSpec, x: &[T]) -> Result<Vec<T>> {
    check_len("toeplitz input", grid.n, x.len())?;
    let n = grid.n;
    let size = (2 * n - 1).next_power_of_two();
    let mut column = vec![Complex::new(T::zero(), T::zero()); size];
    for i in 0..n {
        let c = T::of((-(i as f64) * grid.delta).exp());
        column[i] = Complex::new(c, T::zero());
        if i > 0 {
            column[size - i] = Complex::new(c, T::zero());
        }
    }
    let mut padded = vec![Complex::new(T::zero(), T::zero()); size];
    for (p, &v) in padded.iter_mut().zip(x) {
        *p = Complex::new(v, T::zero());
    }
    let fc = fft(&column, false)?;
    let fx = fft(&padded, false)?;
    let prod: Vec<Complex<T>> = fc.iter().zip(&fx).map(|(a, b)| a * b).collect();
    let y = fft(&prod, true)?;
    Ok(y[..n].iter().map(|c| c.re).collect())
}

/// Materialized row-major `n × k` kernel for the dense timing baseline.
#[derive(Clone, Debug)]
pub struct DenseBaseline<T> {
    n: usize,
    k: usize,
    entries: Vec<T>,
}

impl<T: Real> DenseBaseline<T> {
    /// Bytes the materialized kernel would occupy.
    pub fn bytes_needed(n: usize, k: usize) -> usize {
        n.saturating_mul(k).saturating_mul(std::mem::size_of::<T>())
    }

    pub fn materialize(a: &[T], b: &[T], t: T) -> Result<Self> {
        if !all_finite(a) || !all_finite(b) {
            return Err(Error::NonFinite("dense baseline anchors"));
        }
        if !(t.is_finite() && t > T::zero()) {
            return Err(Error::InvalidTemperature(t.as_f64()));
        }
        let (n, k) = (a.len(), b.len());
        let mut entries = vec![T::zero(); n * k];
        if k > 0 {
            par_chunks_mut!(entries, k).enumerate().for_each(|(i, row)| {
                for (e, &bj) in row.iter_mut().zip(b) {
                    *e = (-(a[i] - bj).abs() / t).exp();
                }
            });
        }
        Ok(Self { n, k, entries })
    }

    /// Row-major `batch × k` in, row-major `batch × n` out.
    pub fn batch_matvec(&self, x: &[T], batch: usize) -> Result<Vec<T>> {
        check_len("dense batch input", batch * self.k, x.len())?;
        let (n, k) = (self.n, self.k);
        let mut out = vec![T::zero(); batch * n];
        if n == 0 {
            return Ok(out);
        }
        par_chunks_mut!(out, n).enumerate().for_each(|(r, yr)| {
            let xr = &x[r * k..(r + 1) * k];
            for (i, y) in yr.iter_mut().enumerate() {
                let row = &self.entries[i * k..(i + 1) * k];
                let mut acc = T::zero();
                for (&e, &v) in row.iter().zip(xr) {
                    acc += e * v;
                }
                *y = acc;
            }
        });
        Ok(out)
    }
}

/// Random Fourier features for `exp(−|u − v|)`: standard Cauchy frequencies
/// and uniform offsets in `[0, 2π)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RffFeatures {
    pub frequencies: Vec<f64>,
    pub offsets: Vec<f64>,
}

impl RffFeatures {
    pub fn feature_count(&self) -> usize {
        self.frequencies.len()
    }

    fn scale(&self) -> f64 {
        2.0 / self.feature_count() as f64
    }

    /// `Σ_j v_j cos(w_d u_j + c_d)` for every feature `d`.
    fn project(&self, anchors: &[f64], v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.feature_count()];
        par_iter_mut!(out).enumerate().for_each(|(d, o)| {
            let (w, c) = (self.frequencies[d], self.offsets[d]);
            *o = anchors.iter().zip(v).map(|(&u, &x)| (w * u + c).cos() * x).sum();
        });
        out
    }

    /// `−(2/D) cot_i Σ_d w_d sin(w_d u_i + c_d) z_d` for every anchor.
    fn derivative(&self, anchors: &[f64], cot: &[f64], z: &[f64]) -> Vec<f64> {
        let scale = self.scale();
        let mut out = vec![0.0; anchors.len()];
        par_iter_mut!(out).enumerate().for_each(|(i, o)| {
            let u = anchors[i];
            let s: f64 = self
                .frequencies
                .iter()
                .zip(&self.offsets)
                .zip(z)
                .map(|((&w, &c), &zd)| w * (w * u + c).sin() * zd)
                .sum();
            *o = -scale * cot[i] * s;
        });
        out
    }
}

/// Draws `D` features deterministically from `seed` via the inverse CDF
/// `w = tan(π(U − ½))`.
pub fn rff_sample(feature_count: usize, seed: u64) -> Result<RffFeatures> {
    if feature_count == 0 {
        return Err(Error::EmptyInput("random features"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut frequencies = Vec::with_capacity(feature_count);
    let mut offsets = Vec::with_capacity(feature_count);
    for _ in 0..feature_count {
        let u: f64 = rng.gen();
        frequencies.push((std::f64::consts::PI * (u - 0.5)).tan());
        let c = std::f64::consts::TAU * rng.gen::<f64>();
        offsets.push(if c < std::f64::consts::TAU { c } else { 0.0 });
    }
    Ok(RffFeatures {
        frequencies,
        offsets,
    })
}

/// Monte Carlo estimate of `A x` with `A_ij ≈ (2/D) Σ_d cos(w_d a_i + c_d) cos(w_d b_j + c_d)`.
pub fn rff_matvec_estimate(feats: &RffFeatures, a: &[f64], b: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    check_len("rff input", b.len(), x.len())?;
    let z = feats.project(b, x);
    let scale = feats.scale();
    let mut y = vec![0.0; a.len()];
    par_iter_mut!(y).enumerate().for_each(|(i, yi)| {
        let u = a[i];
        let s: f64 = feats
            .frequencies
            .iter()
            .zip(&feats.offsets)
            .zip(&z)
            .map(|((&w, &c), &zd)| (w * u + c).cos() * zd)
            .sum();
        *yi = scale * s;
    });
    Ok(y)
}

/// Anchor gradients of `L = gᵀ · rff_matvec_estimate(feats, a, b, x)`.
pub fn rff_grad_estimate(
    feats: &RffFeatures,
    a: &[f64],
    b: &[f64],
    x: &[f64],
    g: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_len("rff input", b.len(), x.len())?;
    check_len("rff cotangent", a.len(), g.len())?;
    let zx = feats.project(b, x);
    let zg = feats.project(a, g);
    Ok((feats.derivative(a, g, &zx), feats.derivative(b, x, &zg)))
}
