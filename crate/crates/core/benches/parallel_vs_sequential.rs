//! Single-threaded pool against the default pool on the data-parallel hot
//! paths. Build with `--no-default-features` to time the sequential fallback.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spade_core::linalg::Matrix;
use spade_core::par;
use spade_core::pseudo_labeler::{PseudoLabeler, PseudoLabelerConfig};
use spade_core::thresholding::{match_curve, ScoreSet, Side};

fn gaussian_rows(n: usize, d: usize, shift: f64, rng: &mut ChaCha8Rng) -> Matrix {
    let data = (0..n * d)
        .map(|_| {
            let v: f64 = rng.sample(rand_distr::StandardNormal);
            v + shift
        })
        .collect();
    Matrix::from_vec(n, d, data).unwrap()
}

fn pools() -> [(&'static str, Option<usize>); 2] {
    [("1-thread", Some(1)), ("default", None)]
}

fn bench_build(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (pos, neg, unl) = (
        gaussian_rows(60, 8, 3.0, &mut rng),
        gaussian_rows(300, 8, 0.0, &mut rng),
        gaussian_rows(4000, 8, 0.0, &mut rng),
    );
    let cfg = PseudoLabelerConfig::default();
    let mut g = c.benchmark_group("pseudo_labeler_build");
    g.sample_size(10);
    for (name, threads) in pools() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| par::with_threads(threads, || PseudoLabeler::build(&pos, &neg, &unl, &cfg, 0).unwrap()))
        });
    }
    g.finish();
}

fn bench_match_curve(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let labeled = ScoreSet::new((0..200).map(|_| rng.random::<f64>() + 1.0).collect()).unwrap();
    let unlabeled = ScoreSet::new((0..5000).map(|_| rng.random::<f64>() * 2.0).collect()).unwrap();
    let mut g = c.benchmark_group("match_curve");
    g.sample_size(10);
    for (name, threads) in pools() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| par::with_threads(threads, || match_curve(&labeled, &unlabeled, Side::Above)))
        });
    }
    g.finish();
}

criterion_group!(benches, bench_build, bench_match_curve);
criterion_main!(benches);
