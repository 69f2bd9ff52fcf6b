//! Synthetic factor-Gaussian round trip: generate (or load) a model, draw
//! training and held-out data, fit from a moment-matched start, and check the
//! Woodbury quantities against dense linear algebra.

use std::path::{Path, PathBuf};
use std::time::Instant;

use laplex::density::FactorGaussian;
use laplex::instrument::count_calls;
use nalgebra::{Cholesky, DMatrix, DVector};

use crate::{BenchError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct DensityOptions {
    /// Generating model; created and written here when the file is missing.
    pub model: Option<PathBuf>,
    pub fit_steps: usize,
    pub step_size: f64,
    pub dim: usize,
    pub rank: usize,
    pub components: usize,
    /// Training rows; the held-out set has the same size.
    pub samples: usize,
    /// Draws for the empirical covariance check (0 skips it).
    pub covariance_samples: usize,
    pub seed: u64,
}

impl Default for DensityOptions {
    fn default() -> Self {
        Self {
            model: None,
            fit_steps: 400,
            step_size: 0.05,
            dim: 64,
            rank: 8,
            components: 2,
            samples: 2000,
            covariance_samples: 0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensityReport {
    pub n: usize,
    pub k_lap: usize,
    pub components: usize,
    /// Gram evaluations in one capacitance build.
    pub gram_calls: u64,
    /// Largest `|Woodbury − dense|` log-density over the held-out rows checked.
    pub loglik_max_abs_diff: f64,
    /// `‖M z* − rhs‖ / ‖rhs‖`, worst over the rows checked.
    pub map_rel_residual: f64,
    pub init_nll: f64,
    pub true_nll: f64,
    pub fitted_nll: f64,
    /// `|fitted − true| / |true|` on held-out data.
    pub nll_rel_gap: f64,
    pub fit_steps_taken: usize,
    pub fit_seconds: f64,
    /// Whether the loss never rose over any 10-step window.
    pub loss_monotone: bool,
    /// Empirical vs implied covariance, relative Frobenius; `None` if skipped.
    pub covariance_rel_err: Option<f64>,
    pub model_path: Option<PathBuf>,
    pub fitted_path: Option<PathBuf>,
}

impl DensityReport {
    /// `key=value` lines in a fixed order.
    pub fn lines(&self) -> Vec<String> {
        let mut v = vec![
            format!("n={}", self.n),
            format!("k_lap={}", self.k_lap),
            format!("I={}", self.components),
            format!("gram_calls={}", self.gram_calls),
            format!("loglik_max_abs_diff={:e}", self.loglik_max_abs_diff),
            format!("map_rel_residual={:e}", self.map_rel_residual),
            format!("init_nll={:.6}", self.init_nll),
            format!("true_nll={:.6}", self.true_nll),
            format!("fitted_nll={:.6}", self.fitted_nll),
            format!("nll_rel_gap={:.6}", self.nll_rel_gap),
            format!("fit_steps_taken={}", self.fit_steps_taken),
            format!("fit_seconds={:.3}", self.fit_seconds),
            format!("loss_monotone={}", self.loss_monotone),
        ];
        v.push(match self.covariance_rel_err {
            Some(e) => format!("covariance_rel_err={e:.6}"),
            None => "covariance_rel_err=skipped".into(),
        });
        if let Some(p) = &self.model_path {
            v.push(format!("model={}", p.display()));
        }
        if let Some(p) = &self.fitted_path {
            v.push(format!("fitted_model={}", p.display()));
        }
        v
    }
}

/// `<dir>/<stem>.fitted.json` next to the generating model.
pub fn fitted_path(model: &Path) -> PathBuf {
    let stem = model.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into());
    model.with_file_name(format!("{stem}.fitted.json"))
}

fn dense_log_density(cov_chol: &Cholesky<f64, nalgebra::Dyn>, log_det: f64, mean: &[f64], x: &[f64]) -> f64 {
    let r = DVector::from_iterator(x.len(), x.iter().zip(mean).map(|(a, b)| a - b));
    -0.5 * (r.dot(&cov_chol.solve(&r)) + log_det + x.len() as f64 * (std::f64::consts::TAU).ln())
}

pub fn empirical_covariance(samples: &DMatrix<f64>) -> DMatrix<f64> {
    let rows = samples.nrows() as f64;
    let mean = samples.row_mean();
    let mut centered = samples.clone();
    for mut r in centered.row_iter_mut() {
        r -= &mean;
    }
    centered.tr_mul(&centered) / (rows - 1.0)
}

/// Rows of `data` compared against the dense log-density and MAP oracles.
const ORACLE_ROWS: usize = 32;

pub fn run_density_demo(opts: &DensityOptions) -> Result<DensityReport> {
    if opts.samples < 2 {
        return Err(BenchError::InvalidFlag("need at least two samples".into()));
    }
    let truth = match &opts.model {
        Some(p) if p.exists() => FactorGaussian::load_json(p)?,
        other => {
            let m = FactorGaussian::synthetic(opts.dim, opts.rank, opts.components, false, opts.seed)?;
            if let Some(p) = other {
                m.save_json(p)?;
            }
            m
        }
    };
    let train = truth.sample(opts.samples, opts.seed.wrapping_add(1))?;
    let held = truth.sample(opts.samples, opts.seed.wrapping_add(2))?;

    let (_, counts) = count_calls(|| truth.capacitance());
    let cap = truth.capacitance()?;
    let sigma = truth.dense_covariance();
    let chol = Cholesky::new(sigma.clone())
        .ok_or_else(|| BenchError::Io("dense covariance is not positive definite".into()))?;
    let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let mut loglik_diff = 0.0f64;
    let mut map_residual = 0.0f64;
    for s in 0..held.nrows().min(ORACLE_ROWS) {
        let x: Vec<f64> = held.row(s).iter().copied().collect();
        let fast = truth.log_likelihood(&x)?;
        loglik_diff = loglik_diff.max((fast - dense_log_density(&chol, log_det, truth.mean(), &x)).abs());
        let est = truth.map_reconstruct(&x)?;
        let rhs = DVector::from_vec(truth.map_rhs(&x)?);
        let res = &cap.matrix * DVector::from_vec(est.z) - &rhs;
        map_residual = map_residual.max(res.norm() / rhs.norm().max(f64::MIN_POSITIVE));
    }

    let init = FactorGaussian::initial_guess(&truth, &train, opts.seed.wrapping_add(3))?;
    let start = Instant::now();
    let fit = init.fit(&train, opts.fit_steps, opts.step_size)?;
    let fit_seconds = start.elapsed().as_secs_f64();
    let loss_monotone = fit
        .losses
        .windows(11)
        .all(|w| w[10] <= w[0])
        && fit.losses.windows(2).all(|w| w[1] <= w[0]);

    let true_nll = truth.mean_nll(&held)?;
    let fitted_nll = fit.model.mean_nll(&held)?;
    let init_nll = init.mean_nll(&held)?;

    let covariance_rel_err = if opts.covariance_samples >= 2 {
        let draws = truth.sample(opts.covariance_samples, opts.seed.wrapping_add(4))?;
        Some((empirical_covariance(&draws) - &sigma).norm() / sigma.norm())
    } else {
        None
    };

    let fitted_path = match &opts.model {
        Some(p) => {
            let fp = fitted_path(p);
            fit.model.save_json(&fp)?;
            Some(fp)
        }
        None => None,
    };

    Ok(DensityReport {
        n: truth.n(),
        k_lap: truth.k(),
        components: truth.components(),
        gram_calls: counts.gram_requests(),
        loglik_max_abs_diff: loglik_diff,
        map_rel_residual: map_residual,
        init_nll,
        true_nll,
        fitted_nll,
        nll_rel_gap: ((fitted_nll - true_nll) / true_nll).abs(),
        fit_steps_taken: fit.losses.len() - 1,
        fit_seconds,
        loss_monotone,
        covariance_rel_err,
        model_path: opts.model.clone(),
        fitted_path,
    })
}
