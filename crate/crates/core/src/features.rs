//! Gradient texture features and their pyramid.

use crate::error::Result;
use crate::volume::{mirror, BoolVolume, Dims, TextureVolume, VideoVolume, Volume};

/// Rec.601 luma.
#[inline]
pub fn grey(c: [f64; 3]) -> f64 {
    0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]
}

/// Default half-width of the averaging window for an `levels`-level pyramid:
/// the window is a square of side `2^(levels-1)`, never narrower than 3.
pub fn default_feature_radius(levels: usize) -> usize {
    ((1usize << levels.saturating_sub(1)) / 2).max(1)
}

/// Per-voxel `(mean |Ix|, mean |Iy|)` over a `(2r+1)^2` window.
pub fn compute_texture_features(u: &VideoVolume, nu_half: usize) -> TextureVolume {
    features_impl(u, None, nu_half)
}

/// Masked variant: a derivative sample is used only if both of its central
/// difference taps are known, and each window average runs over the usable
/// samples only (zero when there are none).
pub fn compute_texture_features_masked(
    u: &VideoVolume,
    known: &BoolVolume,
    nu_half: usize,
) -> TextureVolume {
    features_impl(u, Some(known), nu_half)
}

fn features_impl(u: &VideoVolume, known: Option<&BoolVolume>, r: usize) -> TextureVolume {
    let dims = u.dims();
    let (w, h) = (dims.width, dims.height);
    let mut out = Volume::filled(dims, [0.0; 2]);
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    let mut okx = vec![true; w * h];
    let mut oky = vec![true; w * h];
    for t in 0..dims.frames {
        let frame = u.frame(t);
        let kf = known.map(|k| k.frame(t));
        let g: Vec<f64> = frame.iter().map(|&c| grey(c)).collect();
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let xl = y * w + mirror(x as i64 - 1, w);
                let xr = y * w + mirror(x as i64 + 1, w);
                let yu = mirror(y as i64 - 1, h) * w + x;
                let yd = mirror(y as i64 + 1, h) * w + x;
                gx[i] = ((g[xr] - g[xl]) / 2.0).abs();
                gy[i] = ((g[yd] - g[yu]) / 2.0).abs();
                if let Some(k) = kf {
                    okx[i] = k[xl] && k[xr];
                    oky[i] = k[yu] && k[yd];
                }
            }
        }
        let tx = box_mean(&gx, &okx, w, h, r);
        let ty = box_mean(&gy, &oky, w, h, r);
        for (o, (a, b)) in out.frame_mut(t).iter_mut().zip(tx.into_iter().zip(ty)) {
            *o = [a, b];
        }
    }
    out
}

/// Mean of the usable samples in each clipped square window.
fn box_mean(v: &[f64], ok: &[bool], w: usize, h: usize, r: usize) -> Vec<f64> {
    // Summed-area tables of values and usable counts.
    let stride = w + 1;
    let mut sum = vec![0.0; stride * (h + 1)];
    let mut cnt = vec![0usize; stride * (h + 1)];
    for y in 0..h {
        let mut row_s = 0.0;
        let mut row_c = 0;
        for x in 0..w {
            let i = y * w + x;
            if ok[i] {
                row_s += v[i];
                row_c += 1;
            }
            sum[(y + 1) * stride + x + 1] = sum[y * stride + x + 1] + row_s;
            cnt[(y + 1) * stride + x + 1] = cnt[y * stride + x + 1] + row_c;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let y0 = y.saturating_sub(r);
        let y1 = (y + r + 1).min(h);
        for x in 0..w {
            let x0 = x.saturating_sub(r);
            let x1 = (x + r + 1).min(w);
            let c = cnt[y1 * stride + x1] + cnt[y0 * stride + x0]
                - cnt[y0 * stride + x1]
                - cnt[y1 * stride + x0];
            if c > 0 {
                let s = sum[y1 * stride + x1] - sum[y0 * stride + x1] - sum[y1 * stride + x0]
                    + sum[y0 * stride + x0];
                // Cancellation in the table can leave tiny negatives.
                out[y * w + x] = (s / c as f64).max(0.0);
            }
        }
    }
    out
}

/// Pure decimation of full-resolution features: level `l` (0 = finest)
/// samples `T(2^l x, 2^l y, t)`.
pub fn build_texture_pyramid(t: &TextureVolume, levels: usize) -> Result<Vec<TextureVolume>> {
    let dims = t.dims();
    // Same level limit as the colour pyramid.
    crate::volume::build_occlusion_pyramid(&crate::volume::OcclusionMask::empty(dims), levels)?;
    Ok((0..levels)
        .map(|l| {
            let s = 1usize << l;
            let cd = Dims::new(dims.width.div_ceil(s), dims.height.div_ceil(s), dims.frames);
            Volume::from_fn(cd, |v| *t.at(s * v.x, s * v.y, v.t))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Voxel;
    use rand::{Rng, SeedableRng};

    #[test]
    fn constant_frame_has_zero_features() {
        let u = Volume::filled(Dims::new(9, 7, 2), [40.0, 80.0, 120.0]);
        let t = compute_texture_features(&u, 2);
        assert!(t.data().iter().all(|v| v[0].abs() < 1e-12 && v[1].abs() < 1e-12));
    }

    #[test]
    fn vertical_step_spreads_half_the_jump() {
        let c = 4;
        let u = Volume::from_fn(Dims::new(10, 6, 1), |v| {
            if v.x <= c {
                [20.0; 3]
            } else {
                [30.0; 3]
            }
        });
        let t = compute_texture_features(&u, 0);
        for v in (0..u.dims().len()).map(|i| u.dims().coords(i)) {
            let [tx, ty] = t[v];
            let want = if v.x == c || v.x == c + 1 { 5.0 } else { 0.0 };
            assert!((tx - want).abs() < 1e-9, "{v:?} {tx}");
            assert!(ty.abs() < 1e-12);
        }
    }

    fn naive(u: &VideoVolume, r: i64) -> TextureVolume {
        let d = u.dims();
        let (w, h) = (d.width as i64, d.height as i64);
        let refl = |i: i64, n: i64| if i < 0 { -i } else if i >= n { 2 * n - 2 - i } else { i };
        let gi = |x: i64, y: i64, t: usize| grey(*u.at(x as usize, y as usize, t));
        Volume::from_fn(d, |v| {
            let mut acc = [0.0; 2];
            let mut n = 0.0;
            for y in (v.y as i64 - r)..=(v.y as i64 + r) {
                for x in (v.x as i64 - r)..=(v.x as i64 + r) {
                    if x < 0 || y < 0 || x >= w || y >= h {
                        continue;
                    }
                    let ix = (gi(refl(x + 1, w), y, v.t) - gi(refl(x - 1, w), y, v.t)) / 2.0;
                    let iy = (gi(x, refl(y + 1, h), v.t) - gi(x, refl(y - 1, h), v.t)) / 2.0;
                    acc[0] += ix.abs();
                    acc[1] += iy.abs();
                    n += 1.0;
                }
            }
            [acc[0] / n, acc[1] / n]
        })
    }

    #[test]
    fn noise_matches_direct_double_loop() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let u = Volume::from_fn(Dims::new(17, 13, 2), |_| {
            [rng.random_range(0.0..255.0), rng.random_range(0.0..255.0), rng.random_range(0.0..255.0)]
        });
        let fast = compute_texture_features(&u, 2);
        let slow = naive(&u, 2);
        for i in 0..u.dims().len() {
            for c in 0..2 {
                assert!((fast[i][c] - slow[i][c]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn masked_features_skip_unknown_taps() {
        let d = Dims::new(8, 8, 1);
        let u = Volume::from_fn(d, |v| if v.x >= 4 { [-1.0; 3] } else { [50.0; 3] });
        let known = Volume::from_fn(d, |v| v.x < 4);
        let t = compute_texture_features_masked(&u, &known, 1);
        // Left half is flat; the sentinel on the right must not leak in.
        for y in 0..8 {
            for x in 0..4 {
                assert!(t.at(x, y, 0)[0].abs() < 1e-12, "({x},{y})");
            }
        }
    }

    #[test]
    fn features_are_translation_equivariant_in_the_interior() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let d = Dims::new(24, 20, 1);
        let base: Vec<f64> = (0..(d.width + 3) * d.height).map(|_| rng.random_range(0.0..255.0)).collect();
        let a = Volume::from_fn(d, |v| [base[v.y * (d.width + 3) + v.x]; 3]);
        let b = Volume::from_fn(d, |v| [base[v.y * (d.width + 3) + v.x + 3]; 3]);
        let (ta, tb) = (compute_texture_features(&a, 2), compute_texture_features(&b, 2));
        for y in 4..d.height - 4 {
            for x in 4..d.width - 7 {
                let (p, q) = (ta.at(x + 3, y, 0), tb.at(x, y, 0));
                assert!((p[0] - q[0]).abs() < 1e-9 && (p[1] - q[1]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn texture_pyramid_examples() {
        let d = Dims::new(32, 32, 3);
        let t = Volume::from_fn(d, |v| [v.x as f64, v.y as f64]);
        assert_eq!(build_texture_pyramid(&t, 1).unwrap(), vec![t.clone()]);

        let c = Volume::filled(d, [2.0, 3.0]);
        for level in build_texture_pyramid(&c, 4).unwrap() {
            assert!(level.data().iter().all(|&v| v == [2.0, 3.0]));
        }

        let mut imp = Volume::filled(d, [0.0; 2]);
        imp[Voxel::new(8, 8, 1)] = [1.0, 1.0];
        let p = build_texture_pyramid(&imp, 4).unwrap();
        let coarse = &p[3];
        for i in 0..coarse.dims().len() {
            let nz = coarse[i] != [0.0, 0.0];
            assert_eq!(nz, coarse.dims().coords(i) == Voxel::new(1, 1, 1));
        }
    }

    #[test]
    fn texture_pyramid_values_come_from_full_resolution() {
        let d = Dims::new(21, 19, 2);
        let t = Volume::from_fn(d, |v| [(v.x * 31 + v.y) as f64, v.t as f64]);
        for level in build_texture_pyramid(&t, 4).unwrap() {
            for v in level.data() {
                assert!(t.data().contains(v));
            }
        }
    }

    #[test]
    fn default_radius() {
        assert_eq!(default_feature_radius(1), 1);
        assert_eq!(default_feature_radius(2), 1);
        assert_eq!(default_feature_radius(3), 2);
        assert_eq!(default_feature_radius(4), 4);
    }
}
