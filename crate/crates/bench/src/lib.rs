//! Synthetic inputs shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vinpaint::{BoolVolume, Dims, OcclusionMask, VideoVolume, Volume};

/// Uniform colour noise in `[0, 255)`.
pub fn noise_video(d: Dims, seed: u64) -> VideoVolume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Volume::from_fn(d, |_| std::array::from_fn(|_| rng.random_range(0.0..255.0)))
}

/// Smooth stripes drifting one pixel per frame, with mild noise.
pub fn drifting_stripes(d: Dims, seed: u64) -> VideoVolume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Volume::from_fn(d, |v| {
        let phase = (v.x as f64 + v.t as f64) * 0.4 + v.y as f64 * 0.15;
        let g = 127.5 + 100.0 * phase.sin();
        std::array::from_fn(|k| g + 20.0 * k as f64 + rng.random_range(-5.0..5.0))
    })
}

/// A centred box covering about a quarter of each frame over the middle
/// half of the frames.
pub fn centre_hole(d: Dims) -> OcclusionMask {
    let (w, h, f) = (d.width, d.height, d.frames);
    let occ: BoolVolume = Volume::from_fn(d, |v| {
        (w / 4..3 * w / 4).contains(&v.x) && (h / 4..3 * h / 4).contains(&v.y) && (f / 4..3 * f / 4).contains(&v.t)
    });
    OcclusionMask::new(occ)
}
