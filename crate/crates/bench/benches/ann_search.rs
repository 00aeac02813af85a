use criterion::{criterion_group, criterion_main, Criterion};
use vinpaint::volume::{dilate_mask, valid_source_mask};
use vinpaint::{ann_search, random_init, Dims, DistanceParams, PatchShape, SearchParams};
use vinpaint_bench::{centre_hole, noise_video};

fn patchmatch(c: &mut Criterion) {
    let d = Dims::new(64, 64, 16);
    let u = noise_video(d, 2);
    let mask = centre_hole(d);
    let shape = PatchShape::default();
    let targets = dilate_mask(&mask, shape);
    let sources = valid_source_mask(&mask, shape);
    let dp = DistanceParams::new(0.0, shape);
    let mut group = c.benchmark_group("ann_search");
    group.sample_size(10);
    for iters in [1, 10] {
        let sp = SearchParams { iterations: iters, ..Default::default() };
        group.bench_function(format!("64x64x16/{iters}_iter"), |b| {
            b.iter(|| {
                let phi = random_init(&targets, &sources, 0).unwrap();
                ann_search(&u, None, phi, &targets, &sources, dp, sp).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, patchmatch);
criterion_main!(benches);
