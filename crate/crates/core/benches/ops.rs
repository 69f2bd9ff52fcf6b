//! Data-parallel vs single-thread execution of the batched product and the Gram.
//!
//! The `sequential` variant runs inside a one-thread rayon pool, which is what a
//! `--no-default-features` build does without the pool overhead.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use laplex::LaplexOperator;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn anchors(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(0.0..len as f64 / 64.0)).collect()
}

fn pools() -> [(&'static str, rayon::ThreadPool); 2] {
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let all = rayon::ThreadPoolBuilder::new().build().unwrap();
    [("sequential", one), ("parallel", all)]
}

fn batch_matvec(c: &mut Criterion) {
    let mut group = c.benchmark_group("batch_matvec");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let batch = 16;
    for log in [12, 16] {
        let n = 1usize << log;
        let op = LaplexOperator::new(&anchors(&mut rng, n), &anchors(&mut rng, n), 1.0).unwrap();
        let x: Vec<f64> = (0..n * batch).map(|_| rng.gen_range(-1.0..1.0)).collect();
        group.throughput(Throughput::Elements((n * batch) as u64));
        for (name, pool) in pools() {
            group.bench_with_input(BenchmarkId::new(name, n), &n, |bench, _| {
                pool.install(|| bench.iter(|| op.batch_matvec(&x, batch).unwrap()))
            });
        }
    }
    group.finish();
}

fn gram(c: &mut Criterion) {
    let mut group = c.benchmark_group("weighted_gram");
    group.sample_size(20);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 256;
    for log in [10, 14] {
        let k = 1usize << log;
        let op = LaplexOperator::new(&anchors(&mut rng, n), &anchors(&mut rng, k), 1.0).unwrap();
        let d: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for (name, pool) in pools() {
            group.bench_with_input(BenchmarkId::new(name, k), &k, |bench, _| {
                pool.install(|| bench.iter(|| op.weighted_gram(&d).unwrap()))
            });
        }
    }
    group.finish();
}

criterion_group!(benches, batch_matvec, gram);
criterion_main!(benches);
