use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splatspace_core::render::{orbit_frames_with, render_with, view_camera, Exec, ViewSlot};
use splatspace_core::splat::{GaussianSplatAsset, Provenance, Splat};

fn cloud(n: usize) -> GaussianSplatAsset {
    let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
    let splats = (0..n)
        .map(|_| {
            Splat::new(
                [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)],
                [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 1.0],
                [rng.random_range(-4.5..-3.0); 3],
                rng.random_range(-1.0..4.0),
                [rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)],
            )
        })
        .collect();
    GaussianSplatAsset::new(splats, Provenance::Mock)
}

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn bench_render(c: &mut Criterion) {
    let mut group = c.benchmark_group("render_256");
    group.sample_size(20);
    for n in [1_000, 8_000] {
        let asset = cloud(n);
        let camera = view_camera(&asset.bounds().unwrap(), ViewSlot::Front, 256);
        for (name, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(name, n), &asset, |b, a| {
                b.iter(|| render_with(a, &camera, [0, 0, 0], exec).unwrap())
            });
        }
    }
    group.finish();
}

fn bench_orbit(c: &mut Criterion) {
    let mut group = c.benchmark_group("orbit_36x128");
    group.sample_size(10);
    let asset = cloud(4_096);
    for (name, exec) in MODES {
        group.bench_function(name, |b| b.iter(|| orbit_frames_with(&asset, 36, 128, exec).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, bench_render, bench_orbit);
criterion_main!(benches);
