use std::hint::black_box;

use absgraph::coloring::{learn_partition, ColoringParams};
use absgraph::envsim::{generate_dataset, EnvKind, EnvSpec};
use absgraph::otdist::{distance_matrix, sinkhorn_divergence, OTParams};
use absgraph::sweep::{default_grid, sweep_grid, DEFAULT_CAPS};
use criterion::{criterion_group, criterion_main, Criterion};

fn sinkhorn(c: &mut Criterion) {
    let ds = generate_dataset(&EnvSpec::new(EnvKind::Blocks3, 0)).unwrap();
    let params = OTParams::default();
    let (p, q) = (
        ds.maps[0].downsample(params.downsample),
        ds.maps[1].downsample(params.downsample),
    );
    c.bench_function("sinkhorn_divergence/blocks3", |b| {
        b.iter(|| sinkhorn_divergence(black_box(&p), black_box(&q), &params).unwrap())
    });
}

fn distances(c: &mut Criterion) {
    let ds = generate_dataset(&EnvSpec::new(EnvKind::FruitHom, 0)).unwrap();
    let params = OTParams::default();
    let mut group = c.benchmark_group("distance_matrix");
    group.sample_size(10);
    group.bench_function("fruit_hom", |b| {
        b.iter(|| distance_matrix(black_box(&ds.maps), &params).unwrap())
    });
    group.finish();
}

fn coloring(c: &mut Criterion) {
    let mut group = c.benchmark_group("coloring");
    group.sample_size(10);
    for (kind, k_pick, k_place) in [(EnvKind::FruitHom, 3, 3), (EnvKind::Blocks2, 6, 3)] {
        let ds = generate_dataset(&EnvSpec::new(kind, 0)).unwrap();
        let d = distance_matrix(&ds.maps, &OTParams::default()).unwrap();
        let trace = ds.trace();
        group.bench_function(format!("learn_partition/{}", kind.name()), |b| {
            b.iter(|| learn_partition(trace, &d, &ColoringParams::new(k_pick, k_place, 3)).unwrap())
        });
        let grid = default_grid(trace);
        group.bench_function(format!("sweep/{}", kind.name()), |b| {
            b.iter(|| sweep_grid(trace, &d, &grid, &DEFAULT_CAPS, None).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, sinkhorn, distances, coloring);
criterion_main!(benches);
