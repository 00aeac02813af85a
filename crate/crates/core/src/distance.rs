//! Squared patch distances.
//!
//! The target patch around `p` is clipped to the volume, and with a `known`
//! mask it is further restricted to known voxels. The source patch around
//! `q` is read at the same relative offsets and must be fully in bounds,
//! which holds for every `q` in the valid source set. The sum is normalised
//! by the number of voxels compared, so interior patches without a mask use
//! exactly `1/N`.

use crate::error::{Error, Result};
use crate::volume::{BoolVolume, PatchShape, TextureVolume, VideoVolume, Voxel};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistanceParams {
    /// Weight of the texture-feature term.
    pub lambda: f64,
    pub shape: PatchShape,
}

impl DistanceParams {
    pub fn new(lambda: f64, shape: PatchShape) -> Self {
        assert!(lambda >= 0.0, "lambda must be nonnegative");
        Self { lambda, shape }
    }
}

/// Clipped offset ranges of a target patch and the number of voxels compared.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchWindow {
    lo: [i64; 3],
    hi: [i64; 3],
    count: usize,
}

impl PatchWindow {
    pub fn count(&self) -> usize {
        self.count
    }
}

/// Patch distance evaluator over one colour volume and optional features.
#[derive(Clone, Copy)]
pub struct PatchCost<'a> {
    u: &'a VideoVolume,
    texture: Option<&'a TextureVolume>,
    lambda: f64,
    shape: PatchShape,
    known: Option<&'a BoolVolume>,
}

impl<'a> PatchCost<'a> {
    pub fn new(u: &'a VideoVolume, texture: Option<&'a TextureVolume>, params: DistanceParams) -> Self {
        if let Some(t) = texture {
            assert_eq!(t.dims(), u.dims(), "texture and colour volumes differ in size");
        }
        Self {
            u,
            // With no weight on the features the colour-only sum is used as is.
            texture: texture.filter(|_| params.lambda != 0.0),
            lambda: params.lambda,
            shape: params.shape,
            known: None,
        }
    }

    /// Restrict target-side comparisons to voxels set in `known`.
    pub fn with_known(mut self, known: &'a BoolVolume) -> Self {
        assert_eq!(known.dims(), self.u.dims());
        self.known = Some(known);
        self
    }

    pub fn video(&self) -> &'a VideoVolume {
        self.u
    }

    pub fn shape(&self) -> PatchShape {
        self.shape
    }

    pub fn window(&self, p: usize) -> PatchWindow {
        let dims = self.u.dims();
        let v = dims.coords(p);
        let half = self.shape.half().map(|h| h as i64);
        let pos = [v.x as i64, v.y as i64, v.t as i64];
        let ext = [dims.width as i64, dims.height as i64, dims.frames as i64];
        let mut lo = [0i64; 3];
        let mut hi = [0i64; 3];
        for a in 0..3 {
            lo[a] = (-half[a]).max(-pos[a]);
            hi[a] = half[a].min(ext[a] - 1 - pos[a]);
        }
        let mut count = ((hi[0] - lo[0] + 1) * (hi[1] - lo[1] + 1) * (hi[2] - lo[2] + 1)) as usize;
        if let Some(k) = self.known {
            count = 0;
            self.for_rows(p, &PatchWindow { lo, hi, count }, |start, len| {
                count += k.data()[start..start + len].iter().filter(|&&b| b).count();
                false
            });
        }
        PatchWindow { lo, hi, count }
    }

    #[inline]
    fn for_rows(&self, p: usize, w: &PatchWindow, mut f: impl FnMut(usize, usize) -> bool) {
        let dims = self.u.dims();
        let plane = dims.frame_len() as i64;
        let width = dims.width as i64;
        let len = (w.hi[0] - w.lo[0] + 1) as usize;
        for dt in w.lo[2]..=w.hi[2] {
            for dy in w.lo[1]..=w.hi[1] {
                let start = p as i64 + dt * plane + dy * width + w.lo[0];
                if f(start as usize, len) {
                    return;
                }
            }
        }
    }

    /// Raw sum of squared differences between the patches at `p` and `q`,
    /// or `+inf` as soon as the partial sum exceeds `limit`.
    #[inline]
    pub fn ssd(&self, p: usize, q: usize, w: &PatchWindow, limit: f64) -> f64 {
        let u = self.u.data();
        let delta = q as isize - p as isize;
        let mut sum = 0.0;
        self.for_rows(p, w, |start, len| {
            let a = &u[start..start + len];
            let src = (start as isize + delta) as usize;
            let b = &u[src..src + len];
            match (self.texture, self.known) {
                (None, None) => {
                    for (x, y) in a.iter().zip(b) {
                        sum += colour_sq(x, y);
                    }
                }
                (Some(t), None) => {
                    let ta = &t.data()[start..start + len];
                    let tb = &t.data()[src..src + len];
                    for i in 0..len {
                        sum += colour_sq(&a[i], &b[i]) + self.lambda * feature_sq(&ta[i], &tb[i]);
                    }
                }
                (tex, Some(k)) => {
                    let k = &k.data()[start..start + len];
                    for i in 0..len {
                        if !k[i] {
                            continue;
                        }
                        let mut s = colour_sq(&a[i], &b[i]);
                        if let Some(t) = tex {
                            let td = t.data();
                            s += self.lambda * feature_sq(&td[start + i], &td[src + i]);
                        }
                        sum += s;
                    }
                }
            }
            if sum > limit {
                sum = f64::INFINITY;
                return true;
            }
            false
        });
        sum
    }

    /// Normalised squared distance `d²(W_p, W_q)`; NaN if nothing is compared.
    #[inline]
    pub fn cost(&self, p: usize, q: usize, w: &PatchWindow) -> f64 {
        self.ssd(p, q, w, f64::INFINITY) / w.count as f64
    }

    /// Normalised distance, abandoning early once it certainly exceeds `bound`.
    ///
    /// The result is exact whenever it is `<= bound`; otherwise it may be
    /// `+inf`. Comparisons against `bound` are therefore unaffected.
    #[inline]
    pub fn cost_bounded(&self, p: usize, q: usize, w: &PatchWindow, bound: f64) -> f64 {
        let n = w.count as f64;
        let limit = if bound.is_finite() {
            bound * n * (1.0 + 1e-9)
        } else {
            f64::INFINITY
        };
        self.ssd(p, q, w, limit) / n
    }
}

#[inline(always)]
fn colour_sq(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let d0 = a[0] - b[0];
    let d1 = a[1] - b[1];
    let d2 = a[2] - b[2];
    d0 * d0 + d1 * d1 + d2 * d2
}

#[inline(always)]
fn feature_sq(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    let d0 = a[0] - b[0];
    let d1 = a[1] - b[1];
    d0 * d0 + d1 * d1
}

fn source_in_bounds(u: &VideoVolume, q: Voxel, shape: PatchShape) -> bool {
    let d = u.dims();
    let [hx, hy, ht] = shape.half();
    q.x >= hx && q.y >= hy && q.t >= ht && q.x + hx < d.width && q.y + hy < d.height && q.t + ht < d.frames
}

/// Texture-augmented squared patch distance between full patches at `p` and `q`.
pub fn patch_distance_sq(
    u: &VideoVolume,
    texture: Option<&TextureVolume>,
    p: Voxel,
    q: Voxel,
    params: DistanceParams,
) -> f64 {
    debug_assert!(source_in_bounds(u, p, params.shape) && source_in_bounds(u, q, params.shape));
    let cost = PatchCost::new(u, texture, params);
    let dims = u.dims();
    let pi = dims.voxel_index(p);
    cost.cost(pi, dims.voxel_index(q), &cost.window(pi))
}

/// Squared distance over the known voxels of the patch at `p` only.
pub fn partial_patch_distance_sq(
    u: &VideoVolume,
    texture: Option<&TextureVolume>,
    p: Voxel,
    q: Voxel,
    params: DistanceParams,
    known: &BoolVolume,
) -> Result<f64> {
    debug_assert!(source_in_bounds(u, q, params.shape));
    let cost = PatchCost::new(u, texture, params).with_known(known);
    let dims = u.dims();
    let pi = dims.voxel_index(p);
    let w = cost.window(pi);
    if w.count() == 0 {
        return Err(Error::IsolatedVoxel(pi));
    }
    Ok(cost.cost(pi, dims.voxel_index(q), &w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{Dims, Volume};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn random_scene(seed: u64, d: Dims) -> (VideoVolume, TextureVolume) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let u = Volume::from_fn(d, |_| [rng.random_range(0.0..255.0), rng.random_range(0.0..255.0), rng.random_range(0.0..255.0)]);
        let t = Volume::from_fn(d, |_| [rng.random_range(0.0..20.0), rng.random_range(0.0..20.0)]);
        (u, t)
    }

    fn naive(
        u: &VideoVolume,
        t: &TextureVolume,
        p: Voxel,
        q: Voxel,
        lambda: f64,
        half: i64,
        known: Option<&BoolVolume>,
    ) -> f64 {
        let mut s = 0.0;
        let mut n = 0.0;
        for dt in -half..=half {
            for dy in -half..=half {
                for dx in -half..=half {
                    let r = Voxel::new((p.x as i64 + dx) as usize, (p.y as i64 + dy) as usize, (p.t as i64 + dt) as usize);
                    if known.is_some_and(|k| !k[r]) {
                        continue;
                    }
                    let r2 = Voxel::new((q.x as i64 + dx) as usize, (q.y as i64 + dy) as usize, (q.t as i64 + dt) as usize);
                    for c in 0..3 {
                        s += (u[r][c] - u[r2][c]).powi(2);
                    }
                    for c in 0..2 {
                        s += lambda * (t[r][c] - t[r2][c]).powi(2);
                    }
                    n += 1.0;
                }
            }
        }
        s / n
    }

    #[test]
    fn identical_positions_have_zero_distance() {
        let (u, t) = random_scene(1, Dims::new(8, 8, 8));
        let p = Voxel::new(3, 4, 2);
        let prm = DistanceParams::new(50.0, PatchShape::cube(3).unwrap());
        assert_eq!(patch_distance_sq(&u, Some(&t), p, p, prm), 0.0);
    }

    #[test]
    fn constant_scene_has_zero_distance() {
        let d = Dims::new(9, 9, 9);
        let u = Volume::filled(d, [7.0, 8.0, 9.0]);
        let t = Volume::filled(d, [1.0, 2.0]);
        let prm = DistanceParams::new(50.0, PatchShape::cube(5).unwrap());
        assert_eq!(patch_distance_sq(&u, Some(&t), Voxel::new(2, 2, 2), Voxel::new(6, 5, 4), prm), 0.0);
    }

    #[test]
    fn single_differing_voxel() {
        let d = Dims::new(10, 5, 5);
        let mut u = Volume::filled(d, [100.0; 3]);
        u[Voxel::new(7, 2, 2)][1] += 10.0;
        let prm = DistanceParams::new(0.0, PatchShape::cube(3).unwrap());
        let v = patch_distance_sq(&u, None, Voxel::new(2, 2, 2), Voxel::new(7, 2, 2), prm);
        assert!((v - 100.0 / 27.0).abs() < 1e-12);
        assert!((v - 3.7037).abs() < 1e-4);
    }

    #[test]
    fn partial_equals_full_when_everything_is_known() {
        let d = Dims::new(10, 10, 6);
        let (u, t) = random_scene(4, d);
        let prm = DistanceParams::new(50.0, PatchShape::cube(3).unwrap());
        let all = Volume::filled(d, true);
        let (p, q) = (Voxel::new(2, 3, 1), Voxel::new(7, 6, 4));
        let full = patch_distance_sq(&u, Some(&t), p, q, prm);
        let part = partial_patch_distance_sq(&u, Some(&t), p, q, prm, &all).unwrap();
        assert_eq!(full, part);
    }

    #[test]
    fn partial_with_one_known_voxel() {
        let d = Dims::new(10, 6, 6);
        let mut u = Volume::filled(d, [50.0; 3]);
        let (p, q) = (Voxel::new(2, 2, 2), Voxel::new(6, 3, 3));
        u[Voxel::new(3, 2, 2)][2] = 56.0;
        let mut known = Volume::filled(d, false);
        known[Voxel::new(3, 2, 2)] = true;
        let prm = DistanceParams::new(0.0, PatchShape::cube(3).unwrap());
        let v = partial_patch_distance_sq(&u, None, p, q, prm, &known).unwrap();
        assert_eq!(v, 36.0);
    }

    #[test]
    fn partial_with_nothing_known_is_an_error() {
        let d = Dims::new(8, 8, 8);
        let u = Volume::filled(d, [0.0; 3]);
        let known = Volume::filled(d, false);
        let prm = DistanceParams::new(0.0, PatchShape::cube(3).unwrap());
        let r = partial_patch_distance_sq(&u, None, Voxel::new(3, 3, 3), Voxel::new(5, 5, 5), prm, &known);
        assert!(matches!(r, Err(Error::IsolatedVoxel(_))));
    }

    #[test]
    fn partial_matches_direct_sum() {
        let d = Dims::new(12, 12, 8);
        let (u, t) = random_scene(9, d);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(10);
        let known = Volume::from_fn(d, |_| rng.random_bool(0.6));
        let prm = DistanceParams::new(3.5, PatchShape::cube(5).unwrap());
        for _ in 0..50 {
            let p = Voxel::new(rng.random_range(2..10), rng.random_range(2..10), rng.random_range(2..6));
            let q = Voxel::new(rng.random_range(2..10), rng.random_range(2..10), rng.random_range(2..6));
            let got = partial_patch_distance_sq(&u, Some(&t), p, q, prm, &known).unwrap();
            let want = naive(&u, &t, p, q, 3.5, 2, Some(&known));
            assert!((got - want).abs() < 1e-9 * want.max(1.0));
        }
    }

    #[test]
    fn clipped_target_window_is_normalised_by_its_size() {
        let d = Dims::new(8, 8, 8);
        let (u, _) = random_scene(2, d);
        let prm = DistanceParams::new(0.0, PatchShape::cube(3).unwrap());
        let c = PatchCost::new(&u, None, prm);
        let p = d.index(0, 0, 0);
        let w = c.window(p);
        assert_eq!(w.count(), 8);
        let q = d.index(4, 4, 4);
        let mut s = 0.0;
        for dt in 0..2 {
            for dy in 0..2 {
                for dx in 0..2 {
                    let a = u.at(dx, dy, dt);
                    let b = u.at(4 + dx, 4 + dy, 4 + dt);
                    s += (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>();
                }
            }
        }
        assert!((c.cost(p, q, &w) - s / 8.0).abs() < 1e-9);
    }

    #[test]
    fn bounded_cost_is_exact_below_the_bound() {
        let d = Dims::new(12, 12, 8);
        let (u, t) = random_scene(5, d);
        let prm = DistanceParams::new(2.0, PatchShape::cube(5).unwrap());
        let c = PatchCost::new(&u, Some(&t), prm);
        let p = d.index(3, 4, 3);
        let q = d.index(8, 7, 4);
        let w = c.window(p);
        let exact = c.cost(p, q, &w);
        assert_eq!(c.cost_bounded(p, q, &w, exact), exact);
        assert_eq!(c.cost_bounded(p, q, &w, exact * 2.0), exact);
        assert!(c.cost_bounded(p, q, &w, exact * 0.1) > exact * 0.1);
    }

    proptest! {
        #[test]
        fn distance_properties(seed in any::<u64>(), l1 in 0.0f64..100.0, l2 in 0.0f64..100.0) {
            let d = Dims::new(9, 9, 7);
            let (u, t) = random_scene(seed, d);
            let shape = PatchShape::cube(3).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 1);
            let p = Voxel::new(rng.random_range(1..8), rng.random_range(1..8), rng.random_range(1..6));
            let q = Voxel::new(rng.random_range(1..8), rng.random_range(1..8), rng.random_range(1..6));
            let (lo, hi) = if l1 <= l2 { (l1, l2) } else { (l2, l1) };
            let a = patch_distance_sq(&u, Some(&t), p, q, DistanceParams::new(lo, shape));
            let b = patch_distance_sq(&u, Some(&t), p, q, DistanceParams::new(hi, shape));
            prop_assert!(a <= b);
            let pq = patch_distance_sq(&u, Some(&t), p, q, DistanceParams::new(l1, shape));
            let qp = patch_distance_sq(&u, Some(&t), q, p, DistanceParams::new(l1, shape));
            prop_assert_eq!(pq, qp);
            // With no texture weight the features have no influence at all.
            let z1 = patch_distance_sq(&u, Some(&t), p, q, DistanceParams::new(0.0, shape));
            let z2 = patch_distance_sq(&u, None, p, q, DistanceParams::new(0.0, shape));
            prop_assert_eq!(z1.to_bits(), z2.to_bits());
            let want = naive(&u, &t, p, q, l1, 1, None);
            prop_assert!((pq - want).abs() <= 1e-9 * want.max(1.0));
        }
    }
}
