use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use ndarray::Array2;
use resilience_core::dec::{kl_gradients, soft_assignment, target_distribution};
use resilience_core::features::{assemble_rf, build_road_graph, travel_time_matrix, FeatureConfig, SpeedTable};
use resilience_core::geodata::build_grid;
use resilience_core::neural::{mse_gradient, Activation, DenseStack};
use resilience_core::rating::{fit_forest, ForestConfig};
use resilience_core::rng::substream;
use resilience_core::spatial::{morans_i, queen_weights};
use resilience_core::synth::{mini_city, planted_blobs};

fn dense(c: &mut Criterion) {
    let x = planted_blobs(256, 12, 5, 0.05, 1).x;
    let dims = [12, 500, 500, 2000, 10];
    let acts = [Activation::Relu, Activation::Relu, Activation::Relu, Activation::Identity];
    let stack = DenseStack::random(&dims, &acts, &mut substream(1, "bench", 0)).unwrap();
    let target = Array2::<f64>::zeros((256, 10));
    c.bench_function("encoder forward+backward, batch 256", |b| {
        b.iter(|| {
            let cache = stack.forward(x.view(), None).unwrap();
            let g = mse_gradient(cache.output.view(), target.view()).unwrap();
            black_box(stack.backward(&cache, g.view()).unwrap())
        })
    });
}

fn clustering(c: &mut Criterion) {
    let blobs = planted_blobs(2000, 10, 5, 0.05, 2);
    let centers = blobs.centers.clone();
    c.bench_function("soft assignment + KL gradients, 2000x10, k 5", |b| {
        b.iter(|| {
            let q = soft_assignment(blobs.x.view(), centers.view(), 1.0).unwrap();
            let p = target_distribution(q.view());
            black_box(kl_gradients(blobs.x.view(), centers.view(), p.view(), q.view(), 1.0).unwrap())
        })
    });
}

fn forest(c: &mut Criterion) {
    let blobs = planted_blobs(2000, 12, 5, 0.05, 3);
    let cfg = ForestConfig::default();
    let mut group = c.benchmark_group("forest");
    group.sample_size(10);
    group.bench_function("fit, 2000x12, k 5", |b| {
        b.iter(|| black_box(fit_forest(blobs.x.view(), &blobs.labels, &cfg).unwrap()))
    });
    group.finish();
}

fn spatial(c: &mut Criterion) {
    let city = mini_city(7);
    let grid = build_grid(city.bbox, city.cell_size).unwrap();
    let w = queen_weights(&grid, None).unwrap();
    let values: Vec<f64> = (0..grid.len()).map(|i| ((i * 7) % 5) as f64).collect();
    c.bench_function("Moran's I, 100 cells, 999 permutations", |b| {
        b.iter(|| black_box(morans_i(&values, &w, 999, 1).unwrap()))
    });

    let speeds = SpeedTable::default();
    let net = build_road_graph(&city.layers.roads, &speeds.classes(), &speeds).unwrap();
    let origins: Vec<_> = grid.cells.iter().map(|c| c.centroid).collect();
    c.bench_function("travel times, 100 origins", |b| {
        b.iter(|| black_box(travel_time_matrix(&net, &origins, &city.layers.facilities)))
    });

    let mut group = c.benchmark_group("features");
    group.sample_size(10);
    group.bench_function("assemble feature matrix, mini city", |b| {
        b.iter(|| black_box(assemble_rf(&grid, None, &city.layers, &FeatureConfig::default()).unwrap()))
    });
    group.finish();
}

criterion_group!(benches, dense, clustering, forest, spatial);
criterion_main!(benches);
