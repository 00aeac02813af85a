use criterion::{criterion_group, criterion_main, Criterion};
use vinpaint::volume::{dilate_mask, valid_source_mask};
use vinpaint::{
    ann_search, compute_texture_features, random_init, reconstruct, Dims, DistanceParams, PatchShape,
    ReconstructionMode, SearchParams,
};
use vinpaint_bench::{centre_hole, drifting_stripes};

fn reconstruction(c: &mut Criterion) {
    let d = Dims::new(64, 64, 16);
    let u = drifting_stripes(d, 3);
    let t = compute_texture_features(&u, 2);
    let mask = centre_hole(d);
    let shape = PatchShape::default();
    let targets = dilate_mask(&mask, shape);
    let sources = valid_source_mask(&mask, shape);
    let phi = random_init(&targets, &sources, 0).unwrap();
    let field = ann_search(&u, Some(&t), phi, &targets, &sources, DistanceParams::new(50.0, shape), SearchParams::default())
        .unwrap();
    let mut group = c.benchmark_group("reconstruct");
    for (name, mode) in [("weighted", ReconstructionMode::Weighted), ("unweighted", ReconstructionMode::Unweighted)] {
        group.bench_function(name, |b| {
            b.iter(|| reconstruct(&u, Some(&t), &field.shifts, &field.costs, &mask.occluded, shape, mode))
        });
    }
    group.finish();
    c.bench_function("texture_features/64x64x16", |b| b.iter(|| compute_texture_features(&u, 2)));
}

criterion_group!(benches, reconstruction);
criterion_main!(benches);
