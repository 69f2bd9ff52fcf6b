//! Low-temperature limits of the Laplace operator.
//!
//! As `t → 0`, `exp(−|a_i − b_j|/t)` tends to the equality indicator
//! `1{a_i = b_j}`. With discrete labels as anchors this realizes hashed routing
//! (CountSketch) and, with a diagonal weighting and input replication, any
//! dense linear map. Temperature is never set to zero: at `t ≤ gap/40`,
//! `exp(−gap/t) ≤ e⁻⁴⁰ < 2⁻⁵²`, so off-label leakage is below double rounding.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_len, Error, Result};
use crate::ops::LaplexOperator;
use crate::real::all_finite;

/// Ratio between the smallest label gap and the largest temperature at which
/// the low-temperature route matches the discrete one to double precision.
pub const UNDERFLOW_GAP_RATIO: f64 = 40.0;

/// Signed hash routing `h: [n_in] → [m_out]` with one anchor level per bucket.
#[derive(Clone, Debug, PartialEq)]
pub struct HashRouting {
    hash: Vec<usize>,
    signs: Vec<i8>,
    labels: Vec<f64>,
    min_gap: f64,
}

impl HashRouting {
    pub fn new(hash: Vec<usize>, signs: Vec<i8>, labels: Vec<f64>) -> Result<Self> {
        check_len("routing signs", hash.len(), signs.len())?;
        if labels.is_empty() {
            return Err(Error::EmptyInput("routing labels"));
        }
        if !all_finite(&labels) {
            return Err(Error::NonFinite("routing labels"));
        }
        if let Some(&h) = hash.iter().find(|&&h| h >= labels.len()) {
            return Err(Error::InvalidArgument(format!(
                "hash value {h} out of range for {} buckets",
                labels.len()
            )));
        }
        if signs.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::InvalidArgument("signs must be ±1".into()));
        }
        let mut sorted = labels.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let min_gap = sorted
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min);
        if min_gap <= 0.0 {
            return Err(Error::InvalidArgument("labels must be pairwise distinct".into()));
        }
        Ok(Self {
            hash,
            signs,
            labels,
            min_gap,
        })
    }

    /// Uniform random hash and signs over unit-spaced labels `0, 1, …, m_out − 1`.
    pub fn random(n_in: usize, m_out: usize, seed: u64) -> Result<Self> {
        if m_out == 0 {
            return Err(Error::EmptyInput("routing buckets"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hash = (0..n_in).map(|_| rng.gen_range(0..m_out)).collect();
        let signs = (0..n_in).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect();
        Self::new(hash, signs, (0..m_out).map(|i| i as f64).collect())
    }

    pub fn hash(&self) -> &[usize] {
        &self.hash
    }

    pub fn signs(&self) -> &[i8] {
        &self.signs
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    /// Smallest pairwise label distance (`+∞` for a single bucket).
    pub fn min_gap(&self) -> f64 {
        self.min_gap
    }

    pub fn n_in(&self) -> usize {
        self.hash.len()
    }

    pub fn m_out(&self) -> usize {
        self.labels.len()
    }
}

/// `M_ij = 1{a_i = b_j}` by exact comparison.
pub fn matching_matrix(a: &[f64], b: &[f64]) -> Result<DMatrix<u8>> {
    if !all_finite(a) || !all_finite(b) {
        return Err(Error::NonFinite("matching anchors"));
    }
    Ok(DMatrix::from_fn(a.len(), b.len(), |i, j| u8::from(a[i] == b[j])))
}

/// Direct signed aggregation `y_i = Σ_{h(j) = i} s_j x_j`.
pub fn countsketch_apply(routing: &HashRouting, x: &[f64]) -> Result<Vec<f64>> {
    check_len("countsketch input", routing.n_in(), x.len())?;
    let mut y = vec![0.0; routing.m_out()];
    for ((&h, &s), &v) in routing.hash.iter().zip(&routing.signs).zip(x) {
        y[h] += f64::from(s) * v;
    }
    Ok(y)
}

/// The same routing through a temperature-`t` Laplace operator with row anchors
/// at the labels and column anchors at each input's bucket label.
pub fn countsketch_via_laplex(routing: &HashRouting, x: &[f64], t: f64) -> Result<Vec<f64>> {
    check_len("countsketch input", routing.n_in(), x.len())?;
    if routing.n_in() == 0 {
        return Ok(vec![0.0; routing.m_out()]);
    }
    let cols: Vec<f64> = routing.hash.iter().map(|&h| routing.labels[h]).collect();
    let op = LaplexOperator::new(&routing.labels, &cols, t)?;
    let signed: Vec<f64> = x
        .iter()
        .zip(&routing.signs)
        .map(|(&v, &s)| f64::from(s) * v)
        .collect();
    op.matvec(&signed)
}

/// Realization of a dense `m × n` matrix `W` as `LAPLEX_t(a, b) · diag(D_W) · R`.
#[derive(Clone, Debug, PartialEq)]
pub struct UniversalEmbedding {
    /// `a_i = i` (unit label spacing), length m.
    pub row_anchors: Vec<f64>,
    /// `b_(i,j) = i`, length m·n, flattened row-major in `(i, j)`.
    pub col_anchors: Vec<f64>,
    /// `D_(i,j) = W_ij`.
    pub diag_weights: Vec<f64>,
    /// `replicate[(i, j)] = j`: `(R x)_(i,j) = x_j`.
    pub replicate: Vec<usize>,
    pub n_in: usize,
}

pub fn universal_embed(w: &DMatrix<f64>) -> Result<UniversalEmbedding> {
    if !w.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("embedded matrix"));
    }
    let (m, n) = w.shape();
    if m == 0 || n == 0 {
        return Err(Error::EmptyInput("embedded matrix"));
    }
    let mut col_anchors = Vec::with_capacity(m * n);
    let mut diag_weights = Vec::with_capacity(m * n);
    let mut replicate = Vec::with_capacity(m * n);
    for i in 0..m {
        for j in 0..n {
            col_anchors.push(i as f64);
            diag_weights.push(w[(i, j)]);
            replicate.push(j);
        }
    }
    Ok(UniversalEmbedding {
        row_anchors: (0..m).map(|i| i as f64).collect(),
        col_anchors,
        diag_weights,
        replicate,
        n_in: n,
    })
}

impl UniversalEmbedding {
    /// `LAPLEX_t(a, b) (D_W ⊙ R x)`, which tends to `W x` as `t → 0`.
    pub fn apply(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        check_len("embedding input", self.n_in, x.len())?;
        let op = LaplexOperator::new(&self.row_anchors, &self.col_anchors, t)?;
        let lifted: Vec<f64> = self
            .replicate
            .iter()
            .zip(&self.diag_weights)
            .map(|(&j, &d)| d * x[j])
            .collect();
        op.matvec(&lifted)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::real::rel_l2;

    #[test]
    fn matching_examples() {
        let m = matching_matrix(&[1.0, 2.0], &[2.0, 1.0, 3.0]).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 3, &[0, 1, 0, 1, 0, 0]));
        let a = [0.5, -1.0, 3.0];
        assert_eq!(matching_matrix(&a, &a).unwrap(), DMatrix::identity(3, 3));
        assert!(matching_matrix(&[f64::NAN], &[0.0]).is_err());
    }

    #[test]
    fn low_temperature_kernel_is_matching() {
        let a = [0.0, 1.0, 2.0, 5.0];
        let b = [2.0, 0.0, 3.0, 5.0, 1.0];
        let op = LaplexOperator::new(&a, &b, 1e-3).unwrap();
        let m = matching_matrix(&a, &b).unwrap();
        for i in 0..4 {
            for j in 0..5 {
                assert_eq!(op.entry(i, j), f64::from(m[(i, j)]));
            }
        }
    }

    #[test]
    fn countsketch_hand_case() {
        let r = HashRouting::new(vec![0, 1, 0], vec![1, -1, 1], vec![0.0, 10.0]).unwrap();
        assert_eq!(countsketch_apply(&r, &[1.0, 2.0, 3.0]).unwrap(), vec![4.0, -2.0]);
        assert_eq!(countsketch_apply(&r, &[0.0; 3]).unwrap(), vec![0.0, 0.0]);
        let y = countsketch_via_laplex(&r, &[1.0, 2.0, 3.0], 0.01).unwrap();
        assert!(rel_l2(&y, &[4.0, -2.0]) < 1e-12);
    }

    #[test]
    fn high_temperature_broadcasts_signed_sum() {
        let r = HashRouting::new(vec![0, 1, 0], vec![1, -1, 1], vec![0.0, 10.0]).unwrap();
        let y = countsketch_via_laplex(&r, &[1.0, 2.0, 3.0], 1e6).unwrap();
        for v in y {
            assert!((v - 2.0).abs() < 1e-4);
        }
    }

    #[test]
    fn single_bucket_is_signed_sum() {
        let r = HashRouting::new(vec![0; 4], vec![1, -1, -1, 1], vec![3.0]).unwrap();
        for t in [1e-3, 1.0, 1e3] {
            let y = countsketch_via_laplex(&r, &[1.0, 2.0, 3.0, 4.0], t).unwrap();
            assert_eq!(y, vec![0.0]);
        }
    }

    #[test]
    fn random_routing_matches_direct() {
        let r = HashRouting::random(64, 8, 7).unwrap();
        let x: Vec<f64> = (0..64).map(|i| (i as f64 * 0.77).sin()).collect();
        let want = countsketch_apply(&r, &x).unwrap();
        let got = countsketch_via_laplex(&r, &x, r.min_gap() / UNDERFLOW_GAP_RATIO).unwrap();
        assert!(rel_l2(&got, &want) < 1e-12);
    }

    #[test]
    fn routing_validation() {
        assert!(HashRouting::new(vec![2], vec![1], vec![0.0, 1.0]).is_err());
        assert!(HashRouting::new(vec![0], vec![0], vec![0.0]).is_err());
        assert!(HashRouting::new(vec![0], vec![1], vec![1.0, 1.0]).is_err());
        assert!(HashRouting::new(vec![0, 1], vec![1], vec![0.0, 1.0]).is_err());
    }

    #[test]
    fn identity_and_zero_embeddings() {
        let e = universal_embed(&DMatrix::identity(2, 2)).unwrap();
        let y = e.apply(&[3.0, 4.0], 0.01).unwrap();
        assert!((y[0] - 3.0).abs() < 1e-10 && (y[1] - 4.0).abs() < 1e-10);
        let z = universal_embed(&DMatrix::zeros(3, 2)).unwrap();
        for t in [0.01, 1.0] {
            assert!(z.apply(&[1.0, -1.0], t).unwrap().iter().all(|&v| v == 0.0));
        }
    }
}
