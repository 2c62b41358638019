use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fastmap::agent::Arch;
use fastmap::memory::{ngu_reward, top_k, NguConfig, NguStats};
use fastmap::numerics::{matmul, Tape, Tensor};
use fastmap_bench::learner;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn numerics(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (a, b) = (random(&mut rng, 16, 256), random(&mut rng, 256, 256));
    c.bench_function("matmul 16x256x256", |bch| bch.iter(|| matmul(black_box(&a), black_box(&b)).unwrap()));
    c.bench_function("tape matmul+tanh backward", |bch| {
        bch.iter(|| {
            let mut t = Tape::new();
            let x = t.input(a.clone());
            let w = t.input(b.clone());
            let y = t.matmul(x, w).unwrap();
            let h = t.tanh(y);
            let s = t.sum(h);
            t.backward(s).unwrap()
        })
    });
}

fn memory(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rows: Vec<Vec<f64>> = (0..1024).map(|_| (0..32).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let q: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
    c.bench_function("top-8 of 1024", |bch| bch.iter(|| top_k(black_box(&q), rows.iter().map(Vec::as_slice), 8)));
    c.bench_function("ngu over 1024", |bch| {
        bch.iter(|| {
            let mut stats = NguStats { mean: 1.0, count: 1 };
            ngu_reward(rows.iter().map(Vec::as_slice), black_box(&q), &mut stats, &NguConfig::default()).unwrap()
        })
    });
}

fn training(c: &mut Criterion) {
    let mut g = c.benchmark_group("train step (16 actors x 16 steps)");
    g.sample_size(10);
    for arch in Arch::ALL {
        let mut l = learner(arch, 16, 16);
        g.bench_function(arch.name(), |bch| bch.iter(|| l.train_step().unwrap()));
    }
    g.finish();
}

criterion_group!(benches, numerics, memory, training);
criterion_main!(benches);
