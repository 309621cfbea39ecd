use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use seal_bench::{fixture, spun_map};
use seal_core::envsim::render;
use seal_core::labelprop::{get_labels, label_map};
use seal_core::policy::fmm::fmm_solve;
use seal_core::semmap::{new_map, occupancy_floor_slice, update_map, MapDims};
use seal_core::policy::nav::OBSTACLE_Z;

fn benches(c: &mut Criterion) {
    let f = fixture();
    c.bench_function("render", |b| b.iter(|| render(black_box(&f.scene), &f.pose, &f.cam)));
    c.bench_function("update_map", |b| {
        b.iter_batched(
            || new_map(MapDims::default()).unwrap().with_origin(f.pose),
            |mut m| update_map(&mut m, &f.frame.depth, &f.scores, &f.pose, &f.cam).unwrap(),
            criterion::BatchSize::LargeInput,
        )
    });
    let map = spun_map(&f);
    let mut g = c.benchmark_group("labels");
    g.sample_size(10);
    g.bench_function("label_map", |b| b.iter(|| label_map(black_box(&map), 0.9)));
    let labeled = label_map(&map, 0.9);
    g.bench_function("get_labels", |b| b.iter(|| get_labels(&labeled, &f.pose, &f.frame.depth, &f.cam).unwrap()));
    g.finish();
    let blocked = occupancy_floor_slice(&map, OBSTACLE_Z).unwrap();
    let goal = (map.dims.length / 2, map.dims.width / 2);
    c.bench_function("fmm_256", |b| b.iter(|| fmm_solve(black_box(&blocked), &[goal], None)));
}

criterion_group!(pipeline, benches);
criterion_main!(pipeline);
