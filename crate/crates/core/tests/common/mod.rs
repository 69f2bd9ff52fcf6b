#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Anchors on `[-span, span]`; about a third of draws snap to a coarse grid
/// so that exact ties within and across the two axes are common.
pub fn anchors(rng: &mut ChaCha8Rng, len: usize, span: f64) -> Vec<f64> {
    (0..len)
        .map(|_| {
            let v = rng.gen_range(-span..span);
            if rng.gen_bool(0.35) {
                v.round()
            } else {
                v
            }
        })
        .collect()
}

pub fn signal(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Anchors whose cross distances all exceed `gap` (for finite differences).
pub fn separated_anchors(rng: &mut ChaCha8Rng, n: usize, k: usize, span: f64, gap: f64) -> (Vec<f64>, Vec<f64>) {
    loop {
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-span..span)).collect();
        let b: Vec<f64> = (0..k).map(|_| rng.gen_range(-span..span)).collect();
        if a.iter().all(|&u| b.iter().all(|&v| (u - v).abs() >= gap)) {
            return (a, b);
        }
    }
}
