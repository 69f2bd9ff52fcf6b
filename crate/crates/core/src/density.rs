//! Low-rank-plus-diagonal Gaussian with a structured Laplace factor.
//!
//! `x = m + F z + d ⊙ ε` with `z ~ N(0, I_k)`, `ε ~ N(0, I_n)` and
//! `F = Σ_i diag(w_i) A L_iᵀ`, where `A` is an `n × k` (optionally phased)
//! Laplace operator shared by all components. Everything goes through the
//! `k × k` capacitance `M = I + Fᵀ D⁻¹ F = I + Σ_{i,j} L_i G_ij L_jᵀ` with
//! `G_ij = Aᵀ diag(w_i w_j / d²) A`; only the `I(I+1)/2` distinct Grams are
//! formed, each by the structured Gram on the role-swapped operator.
//!
//! Anchors and phases are fixed; `fit` trains mean, noise, weights and factors.

use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::gradients::gram_vjp_weights;
use crate::ops::LaplexOperator;
use crate::par::map_indices;
use crate::real::all_finite;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug)]
pub struct FactorGaussian {
    mean: Vec<f64>,
    log_diag: Vec<f64>,
    weights: Vec<Vec<f64>>,
    factors: Vec<DMatrix<f64>>,
    op: LaplexOperator<f64>,
    op_t: LaplexOperator<f64>,
}

/// Cached capacitance matrix and its Cholesky factor.
#[derive(Clone, Debug)]
pub struct Capacitance {
    pub matrix: DMatrix<f64>,
    pub chol: Cholesky<f64, Dyn>,
    /// `grams[idx(i, j)]` for `i ≤ j`, row-major over the upper triangle.
    pub grams: Vec<DMatrix<f64>>,
}

impl Capacitance {
    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        self.chol
            .solve(&DVector::from_column_slice(rhs))
            .as_slice()
            .to_vec()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MapEstimate {
    pub z: Vec<f64>,
    pub x_hat: Vec<f64>,
}

/// Gradient of the mean negative log-likelihood in model coordinates.
#[derive(Clone, Debug)]
pub struct FactorGradient {
    pub mean: Vec<f64>,
    pub log_diag: Vec<f64>,
    pub weights: Vec<Vec<f64>>,
    pub factors: Vec<DMatrix<f64>>,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub model: FactorGaussian,
    /// Mean NLL before the first step and after every accepted step.
    pub losses: Vec<f64>,
}

fn pair_index(i: usize, j: usize, components: usize) -> usize {
    debug_assert!(i <= j);
    i * components - i * (i + 1) / 2 + j
}

impl FactorGaussian {
    pub fn new(
        op: LaplexOperator<f64>,
        mean: Vec<f64>,
        log_diag: Vec<f64>,
        weights: Vec<Vec<f64>>,
        factors: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let (n, k) = (op.n(), op.k());
        check_len("model mean", n, mean.len())?;
        check_len("model log noise", n, log_diag.len())?;
        if weights.is_empty() {
            return Err(Error::EmptyInput("model components"));
        }
        check_len("model factors", weights.len(), factors.len())?;
        for w in &weights {
            check_len("component weights", n, w.len())?;
            if !all_finite(w) {
                return Err(Error::NonFinite("component weights"));
            }
        }
        for l in &factors {
            check_len("factor rows", k, l.nrows())?;
            check_len("factor columns", k, l.ncols())?;
            if !l.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("factor"));
            }
        }
        if factors.len() == 1 {
            let l = &factors[0];
            for i in 0..k {
                if l[(i, i)] <= 0.0 {
                    return Err(Error::InvalidArgument(
                        "single-component factor needs a positive diagonal".into(),
                    ));
                }
                for j in i + 1..k {
                    if l[(i, j)] != 0.0 {
                        return Err(Error::InvalidArgument(
                            "single-component factor must be lower-triangular".into(),
                        ));
                    }
                }
            }
        }
        if !all_finite(&mean) || !all_finite(&log_diag) {
            return Err(Error::NonFinite("model mean or noise"));
        }
        if log_diag.iter().any(|v| !v.exp().is_finite() || v.exp() <= 0.0) {
            return Err(Error::NonFinite("noise scale"));
        }
        let op_t = op.transposed();
        Ok(Self {
            mean,
            log_diag,
            weights,
            factors,
            op,
            op_t,
        })
    }

    /// Random model with anchors spread over `[0, 8)`, unit-scale noise and
    /// `O(1)` factor loadings.
    pub fn synthetic(n: usize, k: usize, components: usize, phased: bool, seed: u64) -> Result<Self> {
        if n == 0 || k == 0 || components == 0 {
            return Err(Error::InvalidArgument("synthetic model needs n, k, I ≥ 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let unif = Uniform::new(0.0, 8.0);
        let rows: Vec<f64> = (0..n).map(|_| unif.sample(&mut rng)).collect();
        let cols: Vec<f64> = (0..k).map(|_| unif.sample(&mut rng)).collect();
        let mut op = LaplexOperator::new(&rows, &cols, 1.0)?;
        if phased {
            let ph = Uniform::new(-1.0, 1.0);
            let phi: Vec<f64> = (0..n).map(|_| ph.sample(&mut rng)).collect();
            let psi: Vec<f64> = (0..k).map(|_| ph.sample(&mut rng)).collect();
            op = op.with_phases(&phi, &psi)?;
        }
        let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
        let mean = (0..n).map(|_| normal(&mut rng)).collect();
        let log_diag = (0..n).map(|_| 0.2 * normal(&mut rng)).collect();
        let weights = (0..components)
            .map(|_| (0..n).map(|_| 1.0 + 0.5 * normal(&mut rng)).collect())
            .collect();
        let scale = 1.0 / (k as f64).sqrt();
        let factors = (0..components)
            .map(|_| {
                if components == 1 {
                    DMatrix::from_fn(k, k, |i, j| match i.cmp(&j) {
                        std::cmp::Ordering::Greater => scale * normal(&mut rng),
                        std::cmp::Ordering::Equal => 0.5 + 0.5 * normal(&mut rng).abs(),
                        std::cmp::Ordering::Less => 0.0,
                    })
                } else {
                    DMatrix::from_fn(k, k, |_, _| scale * normal(&mut rng))
                }
            })
            .collect();
        Self::new(op, mean, log_diag, weights, factors)
    }

    /// Starting point for `fit`: same anchors and phases as `template`, mean and
    /// noise from the data moments, small random loadings.
    pub fn initial_guess(template: &FactorGaussian, data: &DMatrix<f64>, seed: u64) -> Result<Self> {
        let n = template.n();
        check_len("data columns", n, data.ncols())?;
        if data.nrows() < 2 {
            return Err(Error::InvalidArgument("need at least two samples".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
        let rows = data.nrows() as f64;
        let mean: Vec<f64> = (0..n).map(|c| data.column(c).sum() / rows).collect();
        let log_diag = (0..n)
            .map(|c| {
                let var = data.column(c).iter().map(|v| (v - mean[c]).powi(2)).sum::<f64>() / (rows - 1.0);
                0.5 * var.max(1e-12).ln() - 0.5
            })
            .collect();
        let k = template.k();
        let components = template.components();
        let weights = (0..components)
            .map(|_| (0..n).map(|_| 0.5 + 0.1 * normal(&mut rng)).collect())
            .collect();
        let factors = (0..components)
            .map(|_| {
                if components == 1 {
                    DMatrix::identity(k, k) * 0.5
                } else {
                    DMatrix::from_fn(k, k, |i, j| {
                        0.1 * normal(&mut rng) + if i == j { 0.5 } else { 0.0 }
                    })
                }
            })
            .collect();
        Self::new(template.op.clone(), mean, log_diag, weights, factors)
    }

    pub fn n(&self) -> usize {
        self.op.n()
    }

    pub fn k(&self) -> usize {
        self.op.k()
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn log_diag(&self) -> &[f64] {
        &self.log_diag
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn factors(&self) -> &[DMatrix<f64>] {
        &self.factors
    }

    pub fn operator(&self) -> &LaplexOperator<f64> {
        &self.op
    }

    fn inv_d2(&self) -> Vec<f64> {
        self.log_diag.iter().map(|l| (-2.0 * l).exp()).collect()
    }

    /// `Fᵀ y = Σ_i L_i Aᵀ (w_i ⊙ y)`.
    pub fn factor_transpose_apply(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len("factor transpose input", self.n(), y.len())?;
        let mut out = DVector::zeros(self.k());
        for (w, l) in self.weights.iter().zip(&self.factors) {
            let u: Vec<f64> = w.iter().zip(y).map(|(a, b)| a * b).collect();
            out += l * DVector::from_vec(self.op.apply_transpose(&u)?);
        }
        Ok(out.as_slice().to_vec())
    }

    /// `F z = Σ_i w_i ⊙ A (L_iᵀ z)`.
    pub fn factor_apply(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_len("factor input", self.k(), z.len())?;
        let zv = DVector::from_column_slice(z);
        let mut out = vec![0.0; self.n()];
        for (w, l) in self.weights.iter().zip(&self.factors) {
            let v = self.op.apply(l.tr_mul(&zv).as_slice())?;
            for ((o, wi), vi) in out.iter_mut().zip(w).zip(v) {
                *o += wi * vi;
            }
        }
        Ok(out)
    }

    /// Capacitance `I + Σ_{i,j} L_i G_ij L_jᵀ` from `I(I+1)/2` structured Grams.
    pub fn capacitance(&self) -> Result<Capacitance> {
        let (k, comps) = (self.k(), self.components());
        let inv_d2 = self.inv_d2();
        let mut grams = Vec::with_capacity(comps * (comps + 1) / 2);
        for i in 0..comps {
            for j in i..comps {
                let c: Vec<f64> = (0..self.n())
                    .map(|l| self.weights[i][l] * self.weights[j][l] * inv_d2[l])
                    .collect();
                grams.push(self.op_t.gram(&c)?.matrix);
            }
        }
        let mut m = DMatrix::identity(k, k);
        for i in 0..comps {
            for j in i..comps {
                let g = &grams[pair_index(i, j, comps)];
                let term = &self.factors[i] * g * self.factors[j].transpose();
                if i == j {
                    m += term;
                } else {
                    m += &term + term.transpose();
                }
            }
        }
        let m = (&m + m.transpose()) * 0.5;
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericalBreakdown("non-finite capacitance".into()));
        }
        let chol = Cholesky::new(m.clone())
            .ok_or_else(|| Error::NumericalBreakdown("capacitance is not positive definite".into()))?;
        Ok(Capacitance {
            matrix: m,
            chol,
            grams,
        })
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        check_len("observation", self.n(), x.len())?;
        if !all_finite(x) {
            return Err(Error::NonFinite("observation"));
        }
        Ok(())
    }

    /// `log N(x; m, D + F Fᵀ)` through the Woodbury identity.
    pub fn log_likelihood(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        let cap = self.capacitance()?;
        self.log_likelihood_with(&cap, &self.inv_d2(), x)
    }

    fn log_likelihood_with(&self, cap: &Capacitance, inv_d2: &[f64], x: &[f64]) -> Result<f64> {
        let r: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        let beta: Vec<f64> = r.iter().zip(inv_d2).map(|(a, b)| a * b).collect();
        let c = self.factor_transpose_apply(&beta)?;
        let z = cap.solve(&c);
        let quad = r.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>()
            - c.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>();
        let log_det = 2.0 * self.log_diag.iter().sum::<f64>() + cap.log_det();
        Ok(-0.5 * (quad + log_det + self.n() as f64 * LN_2PI))
    }

    /// Mean negative log-likelihood over the rows of `data`.
    pub fn mean_nll(&self, data: &DMatrix<f64>) -> Result<f64> {
        check_len("data columns", self.n(), data.ncols())?;
        if data.nrows() == 0 {
            return Err(Error::EmptyInput("data"));
        }
        let cap = self.capacitance()?;
        let inv_d2 = self.inv_d2();
        let lls = map_indices(data.nrows(), |s| {
            let row: Vec<f64> = data.row(s).iter().copied().collect();
            self.log_likelihood_with(&cap, &inv_d2, &row)
        });
        let mut total = 0.0;
        for ll in lls {
            total -= ll?;
        }
        Ok(total / data.nrows() as f64)
    }

    /// Posterior-mean latent `z*` solving `M z* = Fᵀ D⁻¹ (x − m)` and `x̂ = m + F z*`.
    pub fn map_reconstruct(&self, x: &[f64]) -> Result<MapEstimate> {
        self.check_point(x)?;
        let cap = self.capacitance()?;
        let rhs = self.map_rhs(x)?;
        let z = cap.solve(&rhs);
        let fz = self.factor_apply(&z)?;
        let x_hat = self.mean.iter().zip(fz).map(|(m, v)| m + v).collect();
        Ok(MapEstimate { z, x_hat })
    }

    /// Right-hand side `Fᵀ D⁻¹ (x − m)` of the MAP system.
    pub fn map_rhs(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        let beta: Vec<f64> = x
            .iter()
            .zip(&self.mean)
            .zip(self.inv_d2())
            .map(|((a, m), w)| (a - m) * w)
            .collect();
        self.factor_transpose_apply(&beta)
    }

    /// `count` independent draws as rows; each row has its own ChaCha stream,
    /// so the result does not depend on thread count.
    pub fn sample(&self, count: usize, seed: u64) -> Result<DMatrix<f64>> {
        if count == 0 {
            return Err(Error::InvalidArgument("sample count must be ≥ 1".into()));
        }
        let (n, k) = (self.n(), self.k());
        let d: Vec<f64> = self.log_diag.iter().map(|l| l.exp()).collect();
        let rows = map_indices(count, |s| -> Result<Vec<f64>> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(s as u64);
            let z: Vec<f64> = (0..k).map(|_| StandardNormal.sample(&mut rng)).collect();
            let fz = self.factor_apply(&z)?;
            Ok((0..n)
                .map(|l| {
                    let eps: f64 = StandardNormal.sample(&mut rng);
                    self.mean[l] + fz[l] + d[l] * eps
                })
                .collect())
        });
        let mut out = DMatrix::zeros(count, n);
        for (s, row) in rows.into_iter().enumerate() {
            let row = row?;
            for (l, v) in row.into_iter().enumerate() {
                out[(s, l)] = v;
            }
        }
        Ok(out)
    }

    /// Explicit `n × k` factor `F` (quadratic; for checks and small models).
    pub fn dense_factor(&self) -> DMatrix<f64> {
        let (n, k) = (self.n(), self.k());
        let a = DMatrix::from_fn(n, k, |i, j| self.op.entry(i, j));
        let mut f = DMatrix::zeros(n, k);
        for (w, l) in self.weights.iter().zip(&self.factors) {
            f += DMatrix::from_diagonal(&DVector::from_column_slice(w)) * &a * l.transpose();
        }
        f
    }

    /// Explicit `Σ = D + F Fᵀ` (quadratic; for checks and small models).
    pub fn dense_covariance(&self) -> DMatrix<f64> {
        let f = self.dense_factor();
        let d2: Vec<f64> = self.log_diag.iter().map(|l| (2.0 * l).exp()).collect();
        DMatrix::from_diagonal(&DVector::from_vec(d2)) + &f * f.transpose()
    }

    /// Mean NLL over `data` and its gradient with respect to every trained block.
    pub fn mean_nll_grad(&self, data: &DMatrix<f64>) -> Result<(f64, FactorGradient)> {
        let (n, k, comps) = (self.n(), self.k(), self.components());
        check_len("data columns", n, data.ncols())?;
        let count = data.nrows();
        if count == 0 {
            return Err(Error::EmptyInput("data"));
        }
        let inv_n = 1.0 / count as f64;
        let cap = self.capacitance()?;
        let inv_d2 = self.inv_d2();

        struct PerSample {
            loss: f64,
            z: DVector<f64>,
            r_bar: Vec<f64>,
            log_diag_bar: Vec<f64>,
            weights_bar: Vec<Vec<f64>>,
            factors_bar: Vec<DMatrix<f64>>,
        }

        let per = map_indices(count, |s| -> Result<PerSample> {
            let r: Vec<f64> = (0..n).map(|l| data[(s, l)] - self.mean[l]).collect();
            let mut c = DVector::zeros(k);
            let mut us = Vec::with_capacity(comps);
            let mut qs = Vec::with_capacity(comps);
            for (w, l) in self.weights.iter().zip(&self.factors) {
                let u: Vec<f64> = (0..n).map(|p| w[p] * r[p] * inv_d2[p]).collect();
                let q = DVector::from_vec(self.op.apply_transpose(&u)?);
                c += l * &q;
                us.push(u);
                qs.push(q);
            }
            let z = cap.chol.solve(&c);
            let quad = (0..n).map(|p| r[p] * r[p] * inv_d2[p]).sum::<f64>() - c.dot(&z);
            let c_bar = &z * (-inv_n);
            let mut r_bar: Vec<f64> = (0..n).map(|p| r[p] * inv_d2[p] * inv_n).collect();
            let mut log_diag_bar: Vec<f64> = (0..n).map(|p| -r[p] * r[p] * inv_d2[p] * inv_n).collect();
            let mut weights_bar = Vec::with_capacity(comps);
            let mut factors_bar = Vec::with_capacity(comps);
            for i in 0..comps {
                factors_bar.push(&c_bar * qs[i].transpose());
                let e = self.op.apply(self.factors[i].tr_mul(&c_bar).as_slice())?;
                let w = &self.weights[i];
                weights_bar.push((0..n).map(|p| e[p] * r[p] * inv_d2[p]).collect());
                for p in 0..n {
                    r_bar[p] += e[p] * w[p] * inv_d2[p];
                    log_diag_bar[p] -= 2.0 * e[p] * us[i][p];
                }
            }
            Ok(PerSample {
                loss: 0.5 * quad,
                z,
                r_bar,
                log_diag_bar,
                weights_bar,
                factors_bar,
            })
        });

        let mut loss = 0.0;
        let mut zz = DMatrix::zeros(k, k);
        let mut mean_bar = vec![0.0; n];
        let mut log_diag_bar = vec![1.0; n];
        let mut weights_bar = vec![vec![0.0; n]; comps];
        let mut factors_bar = vec![DMatrix::zeros(k, k); comps];
        for p in per {
            let p = p?;
            loss += p.loss * inv_n;
            zz += &p.z * p.z.transpose();
            for l in 0..n {
                mean_bar[l] -= p.r_bar[l];
                log_diag_bar[l] += p.log_diag_bar[l];
            }
            for (i, (wb, fb)) in weights_bar.iter_mut().zip(&mut factors_bar).enumerate() {
                for (acc, v) in wb.iter_mut().zip(&p.weights_bar[i]) {
                    *acc += v;
                }
                *fb += &p.factors_bar[i];
            }
        }
        loss += 0.5 * (2.0 * self.log_diag.iter().sum::<f64>() + cap.log_det() + n as f64 * LN_2PI);

        // Capacitance path: ∂/∂M of ½(log det M − mean cᵀM⁻¹c).
        let m_inv = cap.chol.inverse();
        let m_bar = (&m_inv + zz * inv_n) * 0.5;
        let gram = |i: usize, j: usize| &cap.grams[pair_index(i.min(j), i.max(j), comps)];
        for (i, fb) in factors_bar.iter_mut().enumerate() {
            for j in 0..comps {
                *fb += (&m_bar * &self.factors[j] * gram(i, j)) * 2.0;
            }
        }
        for i in 0..comps {
            for j in i..comps {
                let li_m_lj = self.factors[i].transpose() * &m_bar * &self.factors[j];
                let g_bar = if i == j {
                    li_m_lj
                } else {
                    &li_m_lj + li_m_lj.transpose()
                };
                let g_bar = (&g_bar + g_bar.transpose()) * 0.5;
                let c: Vec<f64> = (0..n)
                    .map(|l| self.weights[i][l] * self.weights[j][l] * inv_d2[l])
                    .collect();
                let c_bar = gram_vjp_weights(&self.op_t, &c, &g_bar)?;
                for l in 0..n {
                    if i == j {
                        weights_bar[i][l] += 2.0 * c_bar[l] * self.weights[i][l] * inv_d2[l];
                    } else {
                        weights_bar[i][l] += c_bar[l] * self.weights[j][l] * inv_d2[l];
                        weights_bar[j][l] += c_bar[l] * self.weights[i][l] * inv_d2[l];
                    }
                    log_diag_bar[l] -= 2.0 * c_bar[l] * c[l];
                }
            }
        }
        Ok((
            loss,
            FactorGradient {
                mean: mean_bar,
                log_diag: log_diag_bar,
                weights: weights_bar,
                factors: factors_bar,
            },
        ))
    }

    /// Number of trained scalars.
    pub fn param_count(&self) -> usize {
        let k = self.k();
        let per_factor = if self.components() == 1 {
            k * (k + 1) / 2
        } else {
            k * k
        };
        2 * self.n() + self.components() * (self.n() + per_factor)
    }

    /// Flat trained parameters: mean, log noise, weights, then factors. A single
    /// factor is stored as its lower triangle with the diagonal in log space.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        p.extend_from_slice(&self.mean);
        p.extend_from_slice(&self.log_diag);
        for w in &self.weights {
            p.extend_from_slice(w);
        }
        let k = self.k();
        let single = self.components() == 1;
        for l in &self.factors {
            for i in 0..k {
                for j in 0..k {
                    if !single || j < i {
                        p.push(l[(i, j)]);
                    } else if j == i {
                        p.push(l[(i, i)].ln());
                    }
                }
            }
        }
        p
    }

    /// Copy with trained parameters replaced; anchors and phases are shared.
    pub fn with_params(&self, p: &[f64]) -> Result<Self> {
        check_len("parameter vector", self.param_count(), p.len())?;
        let (n, k) = (self.n(), self.k());
        let single = self.components() == 1;
        let mut at = 0;
        let mut take = |len: usize| {
            let s = &p[at..at + len];
            at += len;
            s.to_vec()
        };
        let mean = take(n);
        let log_diag = take(n);
        let weights: Vec<Vec<f64>> = (0..self.components()).map(|_| take(n)).collect();
        let mut factors = Vec::with_capacity(self.components());
        for _ in 0..self.components() {
            let mut l = DMatrix::zeros(k, k);
            if single {
                let flat = take(k * (k + 1) / 2);
                let mut idx = 0;
                for i in 0..k {
                    for j in 0..=i {
                        l[(i, j)] = if i == j { flat[idx].exp() } else { flat[idx] };
                        idx += 1;
                    }
                }
            } else {
                let flat = take(k * k);
                for i in 0..k {
                    for j in 0..k {
                        l[(i, j)] = flat[i * k + j];
                    }
                }
            }
            factors.push(l);
        }
        Self::new(self.op.clone(), mean, log_diag, weights, factors)
    }

    /// Flattens a gradient in the same layout as [`FactorGaussian::params`].
    pub fn flatten_gradient(&self, g: &FactorGradient) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        out.extend_from_slice(&g.mean);
        out.extend_from_slice(&g.log_diag);
        for w in &g.weights {
            out.extend_from_slice(w);
        }
        let k = self.k();
        let single = self.components() == 1;
        for (gl, l) in g.factors.iter().zip(&self.factors) {
            for i in 0..k {
                for j in 0..k {
                    if !single || j < i {
                        out.push(gl[(i, j)]);
                    } else if j == i {
                        out.push(gl[(i, i)] * l[(i, i)]);
                    }
                }
            }
        }
        out
    }

    /// Gradient descent on the mean NLL with step halving on any increase and
    /// mild growth after each accepted step. Anchors and phases never change.
    pub fn fit(&self, data: &DMatrix<f64>, steps: usize, step_size: f64) -> Result<FitResult> {
        if data.nrows() < 2 {
            return Err(Error::InvalidArgument("need at least two samples".into()));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("training data"));
        }
        if !(step_size > 0.0 && step_size.is_finite()) {
            return Err(Error::InvalidArgument(format!("step size {step_size}")));
        }
        let mut model = self.clone();
        let (mut loss, mut grad) = model.mean_nll_grad(data)?;
        if !loss.is_finite() {
            return Err(Error::DivergenceDetected { step: 0, loss });
        }
        let mut losses = vec![loss];
        let mut lr = step_size;
        for step in 1..=steps {
            let params = model.params();
            let flat = model.flatten_gradient(&grad);
            let mut accepted = None;
            for _ in 0..40 {
                let trial: Vec<f64> = params.iter().zip(&flat).map(|(p, g)| p - lr * g).collect();
                if let Ok(candidate) = model.with_params(&trial) {
                    if let Ok((l, g)) = candidate.mean_nll_grad(data) {
                        if l.is_finite() && l <= loss {
                            accepted = Some((candidate, l, g));
                            break;
                        }
                    }
                }
                lr *= 0.5;
            }
            match accepted {
                Some((m, l, g)) => {
                    model = m;
                    loss = l;
                    grad = g;
                    losses.push(loss);
                    lr *= 1.25;
                }
                None if lr < 1e-300 || !loss.is_finite() => {
                    return Err(Error::DivergenceDetected { step, loss });
                }
                // No decrease at any step size: stationary to working precision.
                None => break,
            }
        }
        Ok(FitResult { model, losses })
    }

    pub fn to_file(&self) -> ModelFile {
        let k = self.k();
        let phases = self.op.phases();
        ModelFile {
            version: MODEL_FILE_VERSION,
            n: self.n(),
            k_lap: k,
            components: self.components(),
            temperature: self.op.temperature(),
            mean: self.mean.clone(),
            log_diag: self.log_diag.clone(),
            weights: self.weights.clone(),
            anchors_row: self.op.row_anchors().to_vec(),
            anchors_col: self.op.col_anchors().to_vec(),
            phases_row: phases.map(|p| p.row.clone()),
            phases_col: phases.map(|p| p.col.clone()),
            factors: self
                .factors
                .iter()
                .map(|l| (0..k * k).map(|idx| l[(idx / k, idx % k)]).collect())
                .collect(),
        }
    }

    pub fn from_file(file: &ModelFile) -> Result<Self> {
        if file.version != MODEL_FILE_VERSION {
            return Err(Error::Model(format!("unsupported version {}", file.version)));
        }
        let (n, k) = (file.n, file.k_lap);
        check_len("row anchors", n, file.anchors_row.len())?;
        check_len("column anchors", k, file.anchors_col.len())?;
        check_len("components", file.components, file.weights.len())?;
        check_len("components", file.components, file.factors.len())?;
        let mut op = LaplexOperator::new(&file.anchors_row, &file.anchors_col, file.temperature)?;
        match (&file.phases_row, &file.phases_col) {
            (Some(r), Some(c)) => op = op.with_phases(r, c)?,
            (None, None) => {}
            _ => return Err(Error::Model("phases must be given for both axes or neither".into())),
        }
        let mut factors = Vec::with_capacity(file.factors.len());
        for f in &file.factors {
            check_len("factor entries", k * k, f.len())?;
            factors.push(DMatrix::from_row_slice(k, k, f));
        }
        Self::new(op, file.mean.clone(), file.log_diag.clone(), file.weights.clone(), factors)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_file()).map_err(|e| Error::Model(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::Model(format!("{}: {e}", path.display())))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Model(format!("{}: {e}", path.display())))?;
        let file: ModelFile = serde_json::from_str(&text).map_err(|e| Error::Model(e.to_string()))?;
        Self::from_file(&file)
    }
}

pub const MODEL_FILE_VERSION: u32 = 1;

/// On-disk JSON form of a [`FactorGaussian`]. Factors are row-major `k × k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub version: u32,
    pub n: usize,
    pub k_lap: usize,
    #[serde(rename = "I")]
    pub components: usize,
    pub mean: Vec<f64>,
    pub log_diag: Vec<f64>,
    pub weights: Vec<Vec<f64>>,
    pub anchors_row: Vec<f64>,
    pub anchors_col: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phases_row: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phases_col: Option<Vec<f64>>,
    pub factors: Vec<Vec<f64>>,
    #[serde(default = "unit_temperature")]
    pub temperature: f64,
}

fn unit_temperature() -> f64 {
    1.0
}
