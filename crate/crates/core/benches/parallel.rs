//! Sequential vs rayon paths of the hot loops, toggled with `par::set_enabled`.
//! Build with `--no-default-features` to bench the sequential-only binary.

use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use difftensor::analysis;
use difftensor::data::Standardizer;
use difftensor::graph::MultiPartiteGraph;
use difftensor::model::{Model, ModelSpec};
use difftensor::par;
use difftensor::rng;
use difftensor::synth::{self, SynthSpec};
use difftensor::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MODES: [(&str, bool); 2] = [("sequential", false), ("parallel", true)];

fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(rows, cols, |_, _| r.random_range(-1.0..1.0))
}

fn matmul(c: &mut Criterion) {
    let mut g = c.benchmark_group("matmul");
    for n in [64, 256] {
        let (a, b) = (random(n, n, 1), random(n, n, 2));
        for (name, on) in MODES {
            par::set_enabled(on);
            g.bench_with_input(BenchmarkId::new(name, n), &n, |bench, _| bench.iter(|| black_box(a.matmul(&b))));
        }
    }
    g.finish();
}

fn synthetic(num_train: usize) -> (difftensor::data::Dataset, Standardizer) {
    let spec = SynthSpec { num_train, num_test: 1, entities_per_mode: 200, ..SynthSpec::default() };
    let (train, _, _) = synth::generate(&spec).expect("synthetic data");
    let s = Standardizer::fit(&train, false).expect("standardizer");
    (s.apply(&train), s)
}

fn diffusion(c: &mut Criterion) {
    let (data, _) = synthetic(20_000);
    let graph = MultiPartiteGraph::build(&data);
    let weights = vec![0.1; graph.num_edges()];
    let mut g = c.benchmark_group("diffusion");
    for rank in [1, 8] {
        let state = random(graph.num_vertices(), rank, 3);
        for (name, on) in MODES {
            par::set_enabled(on);
            g.bench_with_input(BenchmarkId::new(name, rank), &rank, |bench, _| {
                bench.iter(|| black_box(graph.apply_diffusion(&weights, &state)))
            });
        }
    }
    g.finish();
}

fn objective(c: &mut Criterion) {
    let (data, s) = synthetic(5_000);
    let graph = Arc::new(MultiPartiteGraph::build(&data));
    let spec = ModelSpec { rank: 4, ..ModelSpec::default() };
    let model = Model::init(graph, spec, s, 0).expect("model");
    let mut g = c.benchmark_group("objective");
    g.sample_size(10);
    for (name, on) in MODES {
        par::set_enabled(on);
        g.bench_function(name, |bench| bench.iter(|| black_box(model.objective(&data))));
    }
    g.finish();
}

fn kmeans(c: &mut Criterion) {
    let points = random(2_000, 16, 4);
    let mut g = c.benchmark_group("kmeans");
    g.sample_size(10);
    for (name, on) in MODES {
        par::set_enabled(on);
        g.bench_function(name, |bench| {
            bench.iter(|| black_box(analysis::kmeans(&points, 8, &mut rng::stream(0, rng::KMEANS))))
        });
    }
    g.finish();
}

criterion_group!(benches, matmul, diffusion, objective, kmeans);
criterion_main!(benches);
