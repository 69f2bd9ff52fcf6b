//! The CSV-emitting experiments behind each subcommand.

use laplex::baselines::{
    rff_grad_estimate, rff_matvec_estimate, rff_sample, toeplitz_fft_matvec, DenseBaseline, RffFeatures,
    UniformGridSpec,
};
use laplex::gradients::matvec_vjp;
use laplex::limits::{countsketch_apply, countsketch_via_laplex, HashRouting};
use laplex::oracle::dense_matvec_streamed;
use laplex::real::rel_l2;
use laplex::{LaplexOperator, Real};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::record::{BenchRecord, Experiment, Method, Precision};
use crate::timing::{measure, timed, Trial};
use crate::{median, BenchError, Result};

/// Flags shared by every sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOptions {
    pub n_min: usize,
    pub n_max: usize,
    /// Second dimension; `None` means square.
    pub k: Option<usize>,
    pub batch: usize,
    pub trials: usize,
    pub warmups: usize,
    pub seed: u64,
    pub precision: Precision,
    pub methods: Vec<Method>,
    pub mem_cap_bytes: u64,
    pub time_cap_ms: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            n_min: 1 << 10,
            n_max: 1 << 14,
            k: None,
            batch: 1,
            trials: 5,
            warmups: 2,
            seed: 0,
            precision: Precision::F64,
            methods: vec![Method::Laplex, Method::Dense],
            mem_cap_bytes: 2 << 30,
            time_cap_ms: 2000,
        }
    }
}

impl RunOptions {
    /// Powers of two from `n_min` to `n_max` inclusive.
    pub fn sizes(&self) -> Result<Vec<usize>> {
        if !self.n_min.is_power_of_two() || !self.n_max.is_power_of_two() {
            return Err(BenchError::InvalidSize(format!(
                "--n-min {} and --n-max {} must be powers of two",
                self.n_min, self.n_max
            )));
        }
        if self.n_min > self.n_max {
            return Err(BenchError::InvalidSize(format!("--n-min {} > --n-max {}", self.n_min, self.n_max)));
        }
        let mut out = vec![];
        let mut n = self.n_min;
        while n <= self.n_max {
            out.push(n);
            n *= 2;
        }
        Ok(out)
    }

    fn check(&self, allowed: &[Method]) -> Result<()> {
        if self.batch == 0 || self.trials == 0 {
            return Err(BenchError::InvalidFlag("--batch and --trials must be ≥ 1".into()));
        }
        if let Some(m) = self.methods.iter().find(|m| !allowed.contains(m)) {
            return Err(BenchError::InvalidFlag(format!("method {m:?} is not available here")));
        }
        Ok(())
    }

    fn wants(&self, m: Method) -> bool {
        self.methods.contains(&m)
    }

    fn time_cap_ns(&self) -> u64 {
        self.time_cap_ms.saturating_mul(1_000_000)
    }
}

fn normals<T: Real>(rng: &mut ChaCha8Rng, len: usize) -> Vec<T> {
    (0..len)
        .map(|_| {
            let v: f64 = StandardNormal.sample(rng);
            T::of(v)
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn rows(
    experiment: Experiment,
    method: Method,
    precision: Precision,
    (n, k, batch): (usize, usize, usize),
    feature_count: i64,
    trials: &[Trial],
    rel_err_l2: f64,
    seed: u64,
) -> Vec<BenchRecord> {
    trials
        .iter()
        .enumerate()
        .map(|(trial, t)| BenchRecord {
            experiment,
            method,
            precision,
            n,
            k,
            batch,
            feature_count,
            trial,
            wall_ns: t.wall_ns,
            peak_bytes: t.peak_bytes,
            rel_err_l2,
            seed,
        })
        .collect()
}

/// Why the dense path is skipped at this size, if it is.
fn dense_cap(opts: &RunOptions, bytes: usize, over_time: bool) -> Option<String> {
    if over_time {
        Some(format!("a smaller size exceeded the {} ms time cap", opts.time_cap_ms))
    } else if bytes as u64 > opts.mem_cap_bytes {
        Some(format!("needs {bytes} bytes > mem cap {}", opts.mem_cap_bytes))
    } else {
        None
    }
}

/// Batched forward product: laplex on a prebuilt operator vs a materialized
/// dense kernel (materialization untimed on both sides).
pub fn run_bench_matvec(opts: &RunOptions) -> Result<Vec<BenchRecord>> {
    opts.check(&[Method::Laplex, Method::Dense])?;
    match opts.precision {
        Precision::F32 => bench_matvec_typed::<f32>(opts),
        Precision::F64 => bench_matvec_typed::<f64>(opts),
    }
}

fn bench_matvec_typed<T: Real>(opts: &RunOptions) -> Result<Vec<BenchRecord>> {
    let mut out = vec![];
    let mut dense_over_time = false;
    for n in opts.sizes()? {
        let k = opts.k.unwrap_or(n);
        let dims = (n, k, opts.batch);
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ n as u64);
        let a: Vec<T> = normals(&mut rng, n);
        let b: Vec<T> = normals(&mut rng, k);
        let x: Vec<T> = normals(&mut rng, k * opts.batch);
        if opts.wants(Method::Laplex) {
            let op = LaplexOperator::new(&a, &b, T::one())?;
            let trials = measure(opts.warmups, opts.trials, || op.batch_matvec(&x, opts.batch))?;
            out.extend(rows(Experiment::BenchMatvec, Method::Laplex, opts.precision, dims, -1, &trials, -1.0, opts.seed));
        }
        if opts.wants(Method::Dense) {
            let bytes = DenseBaseline::<T>::bytes_needed(n, k);
            if let Some(why) = dense_cap(opts, bytes, dense_over_time) {
                eprintln!("cap: dense skipped at n={n} k={k}: {why}");
                continue;
            }
            let dense = DenseBaseline::materialize(&a, &b, T::one())?;
            let trials = measure(opts.warmups, opts.trials, || dense.batch_matvec(&x, opts.batch))?;
            dense_over_time = trials.iter().any(|t| t.wall_ns > opts.time_cap_ns());
            out.extend(rows(Experiment::BenchMatvec, Method::Dense, opts.precision, dims, -1, &trials, -1.0, opts.seed));
        }
    }
    Ok(out)
}

/// f32 laplex and f32 dense (single accumulator per output) against an f64
/// dense reference built from the same f32 inputs; plus f64 laplex exactness.
/// One trial per seed `seed + trial`.
pub fn run_accuracy(opts: &RunOptions) -> Result<Vec<BenchRecord>> {
    opts.check(&[Method::Laplex, Method::Dense])?;
    let mut out = vec![];
    let batch = opts.batch;
    for n in opts.sizes()? {
        let k = opts.k.unwrap_or(n);
        for trial in 0..opts.trials {
            let seed = opts.seed + trial as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a: Vec<f32> = normals(&mut rng, n);
            let b: Vec<f32> = normals(&mut rng, k);
            let x: Vec<f32> = normals(&mut rng, k * batch);
            let up = |v: &[f32]| v.iter().map(|&u| f64::from(u)).collect::<Vec<f64>>();
            let (a64, b64, x64) = (up(&a), up(&b), up(&x));
            let reference = dense_matvec_streamed(&a64, &b64, 1.0, &x64, batch)?;
            let mut push = |method, precision, wall_ns, err| {
                out.push(BenchRecord {
                    experiment: Experiment::Accuracy,
                    method,
                    precision,
                    n,
                    k,
                    batch,
                    feature_count: -1,
                    trial,
                    wall_ns,
                    peak_bytes: -1,
                    rel_err_l2: err,
                    seed,
                })
            };
            if opts.wants(Method::Laplex) {
                let op = LaplexOperator::new(&a, &b, 1.0f32)?;
                let (y, ns) = timed(|| op.batch_matvec(&x, batch));
                push(Method::Laplex, Precision::F32, ns, rel_l2(&y?, &reference));
                let op = LaplexOperator::new(&a64, &b64, 1.0)?;
                let (y, ns) = timed(|| op.batch_matvec(&x64, batch));
                push(Method::Laplex, Precision::F64, ns, rel_l2(&y?, &reference));
            }
            if opts.wants(Method::Dense) {
                let (y, ns) = timed(|| dense_matvec_streamed(&a, &b, 1.0f32, &x, batch));
                push(Method::Dense, Precision::F32, ns, rel_l2(&y?, &reference));
            }
        }
    }
    Ok(out)
}

/// Weighted Gram `A diag(D) Aᵀ` with the output side fixed at `gram_n` and the
/// summed side swept over the size range.
pub fn run_gram_bench(opts: &RunOptions, gram_n: usize) -> Result<Vec<BenchRecord>> {
    opts.check(&[Method::Laplex, Method::Dense])?;
    if gram_n == 0 {
        return Err(BenchError::InvalidFlag("--gram-n must be ≥ 1".into()));
    }
    match opts.precision {
        Precision::F32 => gram_typed::<f32>(opts, gram_n),
        Precision::F64 => gram_typed::<f64>(opts, gram_n),
    }
}

fn gram_typed<T: Real>(opts: &RunOptions, n: usize) -> Result<Vec<BenchRecord>> {
    let mut out = vec![];
    let mut dense_over_time = false;
    for k in opts.sizes()? {
        let dims = (n, k, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ k as u64);
        let a: Vec<T> = normals(&mut rng, n);
        let b: Vec<T> = normals(&mut rng, k);
        let d: Vec<T> = normals(&mut rng, k);
        if opts.wants(Method::Laplex) {
            let op = LaplexOperator::new(&a, &b, T::one())?;
            let trials = measure(opts.warmups, opts.trials, || op.weighted_gram(&d))?;
            out.extend(rows(Experiment::BenchGram, Method::Laplex, opts.precision, dims, -1, &trials, -1.0, opts.seed));
        }
        if opts.wants(Method::Dense) {
            let bytes = 2 * DenseBaseline::<T>::bytes_needed(n, k);
            if let Some(why) = dense_cap(opts, bytes, dense_over_time) {
                eprintln!("cap: dense gram skipped at n={n} k={k}: {why}");
                continue;
            }
            let kernel = DMatrix::from_fn(n, k, |i, t| (-(a[i] - b[t]).abs()).exp());
            let trials = measure(opts.warmups, opts.trials, || -> Result<DMatrix<T>> {
                let mut scaled = kernel.clone();
                for (t, mut col) in scaled.column_iter_mut().enumerate() {
                    col *= d[t];
                }
                Ok(scaled * kernel.transpose())
            })?;
            dense_over_time = trials.iter().any(|t| t.wall_ns > opts.time_cap_ns());
            out.extend(rows(Experiment::BenchGram, Method::Dense, opts.precision, dims, -1, &trials, -1.0, opts.seed));
        }
    }
    Ok(out)
}

/// Largest grid for which the O(n²) streamed f64 reference is computed.
pub const REFERENCE_MAX_N: usize = 1 << 14;

/// Uniform-grid products: circulant-embedded FFT vs laplex scans, both against
/// an f64 dense reference when the grid is small enough.
pub fn run_toeplitz_compare(opts: &RunOptions, spacing: f64) -> Result<Vec<BenchRecord>> {
    opts.check(&[Method::Laplex, Method::ToeplitzFft])?;
    match opts.precision {
        Precision::F32 => toeplitz_typed::<f32>(opts, spacing),
        Precision::F64 => toeplitz_typed::<f64>(opts, spacing),
    }
}

fn toeplitz_typed<T: Real>(opts: &RunOptions, spacing: f64) -> Result<Vec<BenchRecord>> {
    let mut out = vec![];
    for n in opts.sizes()? {
        let grid = UniformGridSpec::new(n, spacing)?;
        let anchors64 = grid.anchors();
        let anchors: Vec<T> = anchors64.iter().map(|&v| T::of(v)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ n as u64);
        let x: Vec<T> = normals(&mut rng, n);
        let reference = if n <= REFERENCE_MAX_N {
            let x64: Vec<f64> = x.iter().map(|v| v.as_f64()).collect();
            Some(dense_matvec_streamed(&anchors64, &anchors64, 1.0, &x64, 1)?)
        } else {
            None
        };
        let err = |y: &[T]| reference.as_ref().map_or(-1.0, |r| rel_l2(y, r));
        let dims = (n, n, 1);
        if opts.wants(Method::ToeplitzFft) {
            let y = toeplitz_fft_matvec(&grid, &x)?;
            let trials = measure(opts.warmups, opts.trials, || toeplitz_fft_matvec(&grid, &x))?;
            out.extend(rows(Experiment::ToeplitzCompare, Method::ToeplitzFft, opts.precision, dims, -1, &trials, err(&y), opts.seed));
        }
        if opts.wants(Method::Laplex) {
            let op = LaplexOperator::new(&anchors, &anchors, T::one())?;
            let y = op.matvec(&x)?;
            let trials = measure(opts.warmups, opts.trials, || op.matvec(&x))?;
            out.extend(rows(Experiment::ToeplitzCompare, Method::Laplex, opts.precision, dims, -1, &trials, err(&y), opts.seed));
        }
    }
    Ok(out)
}

/// One RFF problem instance: anchors on `[-4, 4)`, uniform signals.
pub struct RffProblem {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub x: Vec<f64>,
    pub g: Vec<f64>,
}

impl RffProblem {
    pub fn new(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |lo: f64, hi: f64| (0..n).map(|_| rng.gen_range(lo..hi)).collect::<Vec<f64>>();
        Self {
            a: draw(-4.0, 4.0),
            b: draw(-4.0, 4.0),
            x: draw(-1.0, 1.0),
            g: draw(-1.0, 1.0),
        }
    }

    pub fn exact_value(&self) -> Result<Vec<f64>> {
        Ok(LaplexOperator::new(&self.a, &self.b, 1.0)?.matvec(&self.x)?)
    }

    pub fn exact_b_grad(&self) -> Result<Vec<f64>> {
        let op = LaplexOperator::new(&self.a, &self.b, 1.0)?;
        Ok(matvec_vjp(&op, &self.x, &self.g)?.b_bar)
    }
}

/// Relative value and b-gradient errors of one feature draw.
pub fn rff_errors(p: &RffProblem, exact_value: &[f64], exact_grad: &[f64], feats: &RffFeatures) -> Result<(f64, f64)> {
    let value = rff_matvec_estimate(feats, &p.a, &p.b, &p.x)?;
    let (_, b_bar) = rff_grad_estimate(feats, &p.a, &p.b, &p.x, &p.g)?;
    Ok((rel_l2(&value, exact_value), rel_l2(&b_bar, exact_grad)))
}

/// Random Fourier feature estimates over a feature-count sweep, one feature
/// draw per trial (seed `seed + trial`), next to exact laplex timings.
/// Gradient error summaries go to stderr.
pub fn run_rff_tradeoff(opts: &RunOptions, feature_counts: &[usize]) -> Result<Vec<BenchRecord>> {
    opts.check(&[Method::Laplex, Method::Rff])?;
    if feature_counts.is_empty() || feature_counts.contains(&0) {
        return Err(BenchError::InvalidFlag("--features needs positive counts".into()));
    }
    let mut out = vec![];
    for n in opts.sizes()? {
        let p = RffProblem::new(n, opts.seed ^ n as u64);
        let exact = p.exact_value()?;
        let exact_grad = p.exact_b_grad()?;
        let dims = (n, n, 1);
        if opts.wants(Method::Laplex) {
            let op = LaplexOperator::new(&p.a, &p.b, 1.0)?;
            let trials = measure(opts.warmups, opts.trials, || op.matvec(&p.x))?;
            out.extend(rows(Experiment::RffTradeoff, Method::Laplex, Precision::F64, dims, -1, &trials, -1.0, opts.seed));
        }
        if !opts.wants(Method::Rff) {
            continue;
        }
        for &d in feature_counts {
            let mut grad_errs = vec![];
            for trial in 0..opts.trials {
                let seed = opts.seed + trial as u64;
                let feats = rff_sample(d, seed)?;
                let (y, wall_ns) = timed(|| rff_matvec_estimate(&feats, &p.a, &p.b, &p.x));
                let (_, grad_err) = rff_errors(&p, &exact, &exact_grad, &feats)?;
                grad_errs.push(grad_err);
                out.push(BenchRecord {
                    experiment: Experiment::RffTradeoff,
                    method: Method::Rff,
                    precision: Precision::F64,
                    n,
                    k: n,
                    batch: 1,
                    feature_count: d as i64,
                    trial,
                    wall_ns,
                    peak_bytes: -1,
                    rel_err_l2: rel_l2(&y?, &exact),
                    seed,
                });
            }
            let worst = grad_errs.iter().copied().fold(0.0, f64::max);
            let best = grad_errs.iter().copied().fold(f64::INFINITY, f64::min);
            eprintln!(
                "rff gradient n={n} D={d}: median rel err {:.3e} [min {best:.3e}, max {worst:.3e}]",
                median(&grad_errs)
            );
        }
    }
    Ok(out)
}

/// Temperature used by the CountSketch demo on unit-gap integer labels.
pub const COUNTSKETCH_TEMPERATURE: f64 = 0.01;

/// Signed hashed aggregation computed directly and as a low-temperature
/// laplex product. `k` is the bucket count (default `n / 64`, at least 1).
/// Prints the largest absolute disagreement per size; records carry the
/// relative error of the laplex route against the direct one.
pub fn run_countsketch_demo(opts: &RunOptions) -> Result<Vec<BenchRecord>> {
    opts.check(&[Method::Countsketch, Method::Laplex])?;
    let mut out = vec![];
    for n in opts.sizes()? {
        let m = opts.k.unwrap_or((n / 64).max(1));
        let mut max_diff = 0.0f64;
        for trial in 0..opts.trials {
            let seed = opts.seed + trial as u64;
            let routing = HashRouting::random(n, m, seed)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = normals(&mut rng, n);
            let (direct, direct_ns) = timed(|| countsketch_apply(&routing, &x));
            let direct = direct?;
            let (via, via_ns) = timed(|| countsketch_via_laplex(&routing, &x, COUNTSKETCH_TEMPERATURE));
            let via = via?;
            for (u, v) in via.iter().zip(&direct) {
                max_diff = max_diff.max((u - v).abs());
            }
            let base = BenchRecord {
                experiment: Experiment::CountsketchDemo,
                method: Method::Countsketch,
                precision: Precision::F64,
                n,
                k: m,
                batch: 1,
                feature_count: -1,
                trial,
                wall_ns: direct_ns,
                peak_bytes: -1,
                rel_err_l2: 0.0,
                seed,
            };
            if opts.wants(Method::Countsketch) {
                out.push(base.clone());
            }
            if opts.wants(Method::Laplex) {
                out.push(BenchRecord {
                    method: Method::Laplex,
                    wall_ns: via_ns,
                    rel_err_l2: rel_l2(&via, &direct),
                    ..base
                });
            }
        }
        eprintln!(
            "countsketch n_in={n} m_out={m} t={COUNTSKETCH_TEMPERATURE}: max |laplex - direct| = {max_diff:?}"
        );
    }
    Ok(out)
}
