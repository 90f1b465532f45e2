use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use uniground_bench::{normals, small_scene};
use uniground_core::harness::{iou_aabb, iou_obb};
use uniground_core::projection::{build_frame_zbuffer, ViewObservation};
use uniground_core::superpoints::supervoxel_cluster;
use uniground_core::{pair_affinity, AxisAlignedBox, Config, OrientedBox, Vec3};

fn zbuffer(c: &mut Criterion) {
    let scene = small_scene(1, 6);
    let frame = &scene.frames[0];
    c.bench_function("zbuffer/320x240", |b| b.iter(|| build_frame_zbuffer(black_box(&scene.cloud), frame, 1)));
}

fn observations(rng: &mut ChaCha8Rng, views: u32, masks: usize) -> Vec<ViewObservation> {
    (0..views)
        .map(|v| {
            let total = rng.gen_range(10..500u32);
            ViewObservation {
                frame_id: v,
                visible_pixels: rng.gen_range(0..=total),
                total_pixels: total,
                mask_feature: (0..masks).map(|_| rng.gen()).collect(),
            }
        })
        .collect()
}

fn affinity(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = observations(&mut rng, 8, 30);
    let b = observations(&mut rng, 8, 30);
    c.bench_function("affinity/8views_30masks", |bch| bch.iter(|| pair_affinity(black_box(&a), black_box(&b))));
}

fn iou(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut obb = || {
        let c = Vec3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
        let h = Vec3::new(rng.gen_range(0.1..0.8), rng.gen_range(0.1..0.8), rng.gen_range(0.1..0.8));
        OrientedBox::new(c, h, rng.gen_range(-3.0..3.0)).unwrap()
    };
    let pairs: Vec<(OrientedBox, OrientedBox)> = (0..256).map(|_| (obb(), obb())).collect();
    let boxes: Vec<(AxisAlignedBox, AxisAlignedBox)> = pairs.iter().map(|(a, b)| (a.to_aabb(), b.to_aabb())).collect();
    c.bench_function("iou/obb_x256", |b| {
        b.iter(|| pairs.iter().map(|(x, y)| iou_obb(x, y)).sum::<f64>())
    });
    c.bench_function("iou/aabb_x256", |b| {
        b.iter(|| boxes.iter().map(|(x, y)| iou_aabb(x, y)).sum::<f64>())
    });
}

fn supervoxel(c: &mut Criterion) {
    let scene = small_scene(4, 6);
    let n = normals(&scene);
    let params = Config::tabletop().superpoints.supervoxel;
    let mut g = c.benchmark_group("supervoxel");
    g.sample_size(10);
    g.bench_function("tabletop_6_objects", |b| {
        b.iter(|| supervoxel_cluster(black_box(&scene.cloud), &n, &params).unwrap())
    });
    g.finish();
}

criterion_group!(benches, zbuffer, affinity, iou, supervoxel);
criterion_main!(benches);
