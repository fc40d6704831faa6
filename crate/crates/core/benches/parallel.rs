use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array2;
use num_complex::Complex64;
use wbe_core::born::{adjoint_impl2, fbp_reconstruct, BornOperator, FbpConfig, Kernel};
use wbe_core::helmholtz::{simulate_dataset, HelmholtzConfig};
use wbe_core::media::{generate, FamilyParams};
use wbe_core::model::{Init, ModelContext, ModelKind, ModelParams, ModelSpec, TrainData};
use wbe_core::{par, Family, FrequencySet, Grids, Rng};

fn modes() -> [(&'static str, bool); 2] {
    [("parallel", false), ("sequential", true)]
}

fn run<R>(sequential: bool, f: impl FnOnce() -> R) -> R {
    if sequential {
        par::with_sequential(f)
    } else {
        f()
    }
}

fn random_field(n: usize, seed: u64) -> Array2<Complex64> {
    let mut rng = Rng::new(seed);
    Array2::from_shape_fn((n, n), |_| Complex64::new(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)))
}

fn backprojection(c: &mut Criterion) {
    let mut group = c.benchmark_group("adjoint_impl2");
    for n in [32, 64] {
        let grids = Grids::square(n).unwrap();
        let kernel = Kernel::new(20.0, &grids);
        let lam = random_field(n, 1);
        for (name, seq) in modes() {
            group.bench_with_input(BenchmarkId::new(name, n), &n, |b, _| {
                b.iter(|| run(seq, || adjoint_impl2(black_box(&lam), &kernel, &grids).unwrap()))
            });
        }
    }
    group.finish();
}

fn far_fields(c: &mut Criterion) {
    let n = 16;
    let grids = Grids::square(n).unwrap();
    let freqs = FrequencySet::scaled_default(n);
    let mut rng = Rng::new(2);
    let media: Vec<_> = (0..2)
        .map(|_| generate(Family::Smooth, n, &FamilyParams::default(), &mut rng).unwrap())
        .collect();
    let cfg = HelmholtzConfig::default();
    let mut group = c.benchmark_group("simulate_dataset");
    group.sample_size(10);
    for (name, seq) in modes() {
        group.bench_function(name, |b| {
            b.iter(|| run(seq, || simulate_dataset(black_box(&media), &freqs, &grids, &cfg).unwrap()))
        });
    }
    group.finish();
}

fn reconstruction(c: &mut Criterion) {
    let n = 16;
    let grids = Grids::square(n).unwrap();
    let freqs = FrequencySet::scaled_default(n);
    let mut rng = Rng::new(3);
    let eta = generate(Family::Smooth, n, &FamilyParams::default(), &mut rng).unwrap();
    let data: Vec<_> = freqs
        .omegas()
        .into_iter()
        .map(|w| BornOperator::new(w, &grids).forward(eta.values.view()))
        .collect();
    let cfg = FbpConfig::default();
    let mut group = c.benchmark_group("fbp_reconstruct");
    group.sample_size(10);
    for (name, seq) in modes() {
        group.bench_function(name, |b| {
            b.iter(|| run(seq, || fbp_reconstruct(black_box(&data), &freqs, &grids, &cfg).unwrap()))
        });
    }
    group.finish();
}

fn training_batch(c: &mut Criterion) {
    let n = 16;
    let grids = Grids::square(n).unwrap();
    let freqs = FrequencySet::scaled_default(n);
    let mut group = c.benchmark_group("batch_gradient");
    group.sample_size(10);
    for kind in [ModelKind::Uncompressed, ModelKind::Compressed] {
        let spec = ModelSpec::new(kind, &grids, &freqs);
        let params = ModelParams::init(&spec, Init::KernelInit, 0).unwrap();
        let ctx = ModelContext::new(&spec).unwrap();
        let data = TrainData {
            inputs: (0..8).map(|i| (0..3).map(|k| random_field(n, 10 * i + k)).collect()).collect(),
            targets: vec![Array2::zeros((n, n)); 8],
        };
        let batch: Vec<usize> = (0..8).collect();
        for (name, seq) in modes() {
            group.bench_function(BenchmarkId::new(name, kind), |b| {
                b.iter(|| run(seq, || wbe_core::model::batch_gradient(&params, &ctx, &data, black_box(&batch)).unwrap()))
            });
        }
    }
    group.finish();
}

criterion_group!(benches, backprojection, far_fields, reconstruction, training_batch);
criterion_main!(benches);
