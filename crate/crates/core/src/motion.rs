//! Dominant affine motion, frame realignment and the inverse paste.
//!
//! A warp `θ` maps coordinates of a frame `a` to coordinates of a frame `b`
//! such that `I_b(θ(x)) ≈ I_a(x)`. Pairwise warps between consecutive frames
//! are chained into warps from every frame to the middle (reference) frame;
//! aligned frame `n` is frame `n` resampled at `θ_{n,ref}⁻¹(x)`.

use nalgebra::{Matrix6, SymmetricEigen, Vector6};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::grey;
use crate::volume::{mirror, BoolVolume, OcclusionMask, VideoVolume, Volume};

/// `(x, y) ↦ (a1 + a2 x + a3 y, a4 + a5 x + a6 y)`, stored as `[a1, ..., a6]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineParams(pub [f64; 6]);

impl Default for AffineParams {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl AffineParams {
    pub const IDENTITY: AffineParams = AffineParams([0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);

    pub fn translation(tx: f64, ty: f64) -> Self {
        AffineParams([tx, 1.0, 0.0, ty, 0.0, 1.0])
    }

    /// Rotation by `angle` radians about `(cx, cy)` followed by a translation.
    pub fn rotation_about(angle: f64, cx: f64, cy: f64, tx: f64, ty: f64) -> Self {
        let (s, c) = angle.sin_cos();
        AffineParams([
            cx - c * cx + s * cy + tx,
            c,
            -s,
            cy - s * cx - c * cy + ty,
            s,
            c,
        ])
    }

    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let a = &self.0;
        (a[0] + a[1] * x + a[2] * y, a[3] + a[4] * x + a[5] * y)
    }

    pub fn det(&self) -> f64 {
        self.0[1] * self.0[5] - self.0[2] * self.0[4]
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }

    /// `self ∘ inner`: apply `inner` first.
    pub fn compose(&self, inner: &AffineParams) -> AffineParams {
        let [a1, a2, a3, a4, a5, a6] = self.0;
        let [b1, b2, b3, b4, b5, b6] = inner.0;
        AffineParams([
            a1 + a2 * b1 + a3 * b4,
            a2 * b2 + a3 * b5,
            a2 * b3 + a3 * b6,
            a4 + a5 * b1 + a6 * b4,
            a5 * b2 + a6 * b5,
            a5 * b3 + a6 * b6,
        ])
    }

    pub fn invert(&self) -> Result<AffineParams> {
        let d = self.det();
        if !d.is_finite() || d.abs() < 1e-12 {
            return Err(Error::SingularWarp);
        }
        let [a1, a2, a3, a4, a5, a6] = self.0;
        let (i2, i3, i5, i6) = (a6 / d, -a3 / d, -a5 / d, a2 / d);
        Ok(AffineParams([
            -(i2 * a1 + i3 * a4),
            i2,
            i3,
            -(i5 * a1 + i6 * a4),
            i5,
            i6,
        ]))
    }

    /// Same motion expressed on a grid scaled by `s` (coordinates `s·x`).
    fn rescale(&self, s: f64) -> AffineParams {
        let mut a = self.0;
        a[0] *= s;
        a[3] *= s;
        AffineParams(a)
    }
}

/// A single-channel image.
#[derive(Clone, Debug, PartialEq)]
pub struct GreyFrame {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl GreyFrame {
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    /// Luma of frame `t` of `u`.
    pub fn from_video(u: &VideoVolume, t: usize) -> Self {
        let d = u.dims();
        Self {
            width: d.width,
            height: d.height,
            data: u.frame(t).iter().map(|&c| grey(c)).collect(),
        }
    }

    #[inline]
    fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    fn inside(&self, x: f64, y: f64) -> bool {
        const EPS: f64 = 1e-9;
        x >= -EPS && y >= -EPS && x <= self.width as f64 - 1.0 + EPS && y <= self.height as f64 - 1.0 + EPS
    }

    /// Bilinear sample; the position is clamped to the frame.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let fp = Footprint::new(x, y, self.width, self.height);
        fp.taps().map(|(i, w)| w * self.data[i]).sum()
    }

    fn gradients(&self) -> (GreyFrame, GreyFrame) {
        let (w, h) = (self.width, self.height);
        let gx = GreyFrame::from_fn(w, h, |x, y| {
            (self.at(mirror(x as i64 + 1, w), y) - self.at(mirror(x as i64 - 1, w), y)) / 2.0
        });
        let gy = GreyFrame::from_fn(w, h, |x, y| {
            (self.at(x, mirror(y as i64 + 1, h)) - self.at(x, mirror(y as i64 - 1, h))) / 2.0
        });
        (gx, gy)
    }

    /// Binomial blur sampled at even positions.
    fn reduce(&self) -> GreyFrame {
        const K: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
        let (w, h) = (self.width, self.height);
        GreyFrame::from_fn(w.div_ceil(2), h.div_ceil(2), |x, y| {
            let mut acc = 0.0;
            for (j, ky) in K.iter().enumerate() {
                let sy = mirror(2 * y as i64 + j as i64 - 2, h);
                for (i, kx) in K.iter().enumerate() {
                    acc += kx * ky * self.at(mirror(2 * x as i64 + i as i64 - 2, w), sy);
                }
            }
            acc
        })
    }
}

/// Bilinear interpolation footprint of a clamped position.
#[derive(Clone, Copy, Debug)]
struct Footprint {
    idx: [usize; 4],
    w: [f64; 4],
}

impl Footprint {
    fn new(x: f64, y: f64, width: usize, height: usize) -> Self {
        let x = x.clamp(0.0, (width - 1) as f64);
        let y = y.clamp(0.0, (height - 1) as f64);
        let x0 = (x.floor() as usize).min(width - 1);
        let y0 = (y.floor() as usize).min(height - 1);
        let x1 = (x0 + 1).min(width - 1);
        let y1 = (y0 + 1).min(height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        Self {
            idx: [y0 * width + x0, y0 * width + x1, y1 * width + x0, y1 * width + x1],
            w: [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy],
        }
    }

    fn taps(self) -> impl Iterator<Item = (usize, f64)> {
        self.idx.into_iter().zip(self.w).filter(|&(_, w)| w != 0.0)
    }
}

/// Result of a pairwise estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MotionEstimate {
    pub params: AffineParams,
    /// The normal equations were singular at some level; `params` is then
    /// the last well-posed estimate (identity if none).
    pub degraded: bool,
}

const MAX_ITERS: usize = 20;
const UPDATE_TOL: f64 = 1e-4;
const TUKEY_C: f64 = 4.685;
const MAD_TO_SIGMA: f64 = 1.4826;
/// Largest corner motion one level may add, as a fraction of the frame size.
const MAX_LEVEL_MOVE: f64 = 0.25;

/// Robust affine motion from `a` to `b`, ignoring pixels of `a` set in `mask_a`.
pub fn estimate_affine(a: &GreyFrame, b: &GreyFrame, mask_a: Option<&[bool]>) -> MotionEstimate {
    estimate_affine_masked(a, b, mask_a, None)
}

/// Like [`estimate_affine`], also ignoring pixels whose warped position
/// touches a pixel set in `mask_b`.
pub fn estimate_affine_masked(
    a: &GreyFrame,
    b: &GreyFrame,
    mask_a: Option<&[bool]>,
    mask_b: Option<&[bool]>,
) -> MotionEstimate {
    assert_eq!((a.width, a.height), (b.width, b.height), "frame sizes differ");
    let levels = {
        let mut l = 1;
        while l < 3 && a.width.min(a.height) >> l >= 16 {
            l += 1;
        }
        l
    };
    let mut pa = vec![a.clone()];
    let mut pb = vec![b.clone()];
    let mut ma = vec![mask_a.map(|m| m.to_vec())];
    let mut mb = vec![mask_b.map(|m| m.to_vec())];
    for l in 1..levels {
        pa.push(pa[l - 1].reduce());
        pb.push(pb[l - 1].reduce());
        let (w, h) = (pa[l - 1].width, pa[l - 1].height);
        ma.push(ma[l - 1].as_ref().map(|m| reduce_mask(m, w, h)));
        mb.push(mb[l - 1].as_ref().map(|m| reduce_mask(m, w, h)));
    }
    let mut theta = AffineParams::IDENTITY;
    let mut degraded = false;
    for l in (0..levels).rev() {
        if l + 1 < levels {
            theta = theta.rescale(2.0);
        }
        match irls(&pa[l], &pb[l], ma[l].as_deref(), mb[l].as_deref(), theta) {
            // A level whose content cannot pin the motion (flattened or
            // aliased texture) may wander; such a result is dropped.
            Some(t) if corner_shift(&t, &theta, pa[l].width, pa[l].height) <= MAX_LEVEL_MOVE * pa[l].width.max(pa[l].height) as f64 => {
                theta = t
            }
            Some(_) => {}
            None => degraded = true,
        }
    }
    // Coarse levels can lock onto an alias of a periodic texture; a direct
    // full-resolution estimate from the identity competes with the result.
    if levels > 1 {
        if let Some(direct) = irls(a, b, mask_a, mask_b, AffineParams::IDENTITY) {
            let grad = b.gradients();
            let at = |t: &AffineParams| linearise(a, b, &grad, mask_a, mask_b, t);
            let (_, c) = at(&theta).scale();
            if at(&direct).loss(0.0, c) < at(&theta).loss(0.0, c) {
                theta = direct;
            }
        }
    }
    if degraded && theta.det().abs() < 1e-12 {
        theta = AffineParams::IDENTITY;
    }
    MotionEstimate { params: theta, degraded }
}

fn reduce_mask(m: &[bool], w: usize, h: usize) -> Vec<bool> {
    let (cw, ch) = (w.div_ceil(2), h.div_ceil(2));
    let mut out = vec![false; cw * ch];
    for y in 0..ch {
        for x in 0..cw {
            let (fx, fy) = (2 * x as i64, 2 * y as i64);
            out[y * cw + x] = (-1..=1).any(|dy: i64| {
                (-1..=1).any(|dx: i64| {
                    let (sx, sy) = (fx + dx, fy + dy);
                    sx >= 0 && sy >= 0 && (sx as usize) < w && (sy as usize) < h && m[sy as usize * w + sx as usize]
                })
            });
        }
    }
    out
}

struct Linearisation {
    /// `(residual, jacobian row)` for every usable pixel.
    rows: Vec<(f64, [f64; 6])>,
    /// Unmasked pixels of `a` mapped outside `b`.
    outside: usize,
}

#[allow(clippy::too_many_arguments)]
fn linearise(
    a: &GreyFrame,
    b: &GreyFrame,
    grad: &(GreyFrame, GreyFrame),
    mask_a: Option<&[bool]>,
    mask_b: Option<&[bool]>,
    theta: &AffineParams,
) -> Linearisation {
    let (gx, gy) = grad;
    let (w, h) = (a.width, a.height);
    let mut rows = Vec::with_capacity(w * h);
    let mut outside = 0;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if mask_a.is_some_and(|m| m[i]) {
                continue;
            }
            let (xf, yf) = (x as f64, y as f64);
            let (wx, wy) = theta.apply(xf, yf);
            if !b.inside(wx, wy) {
                outside += 1;
                continue;
            }
            let fp = Footprint::new(wx, wy, w, h);
            if let Some(mb) = mask_b {
                if fp.taps().any(|(j, _)| mb[j]) {
                    continue;
                }
            }
            let mut ib = 0.0;
            let mut ix = 0.0;
            let mut iy = 0.0;
            for (j, wt) in fp.taps() {
                ib += wt * b.data[j];
                ix += wt * gx.data[j];
                iy += wt * gy.data[j];
            }
            rows.push((ib - a.data[i], [ix, ix * xf, ix * yf, iy, iy * xf, iy * yf]));
        }
    }
    Linearisation { rows, outside }
}

impl Linearisation {
    /// Mean Tukey loss, pixels mapped outside `b` counting as outliers.
    fn loss(&self, med: f64, c: f64) -> f64 {
        let total: f64 = self
            .rows
            .iter()
            .map(|(r, _)| {
                let u = ((r - med) / c).clamp(-1.0, 1.0);
                1.0 - (1.0 - u * u).powi(3)
            })
            .sum();
        (total + self.outside as f64) / (self.rows.len() + self.outside).max(1) as f64
    }

    fn scale(&self) -> (f64, f64) {
        let mut res: Vec<f64> = self.rows.iter().map(|r| r.0).collect();
        let med = median(&mut res);
        let mut dev: Vec<f64> = self.rows.iter().map(|r| (r.0 - med).abs()).collect();
        (med, (TUKEY_C * MAD_TO_SIGMA * median(&mut dev)).max(1e-9))
    }
}

/// One level of Gauss-Newton with Tukey reweighting. A step is kept only if
/// it lowers the robust loss (halving it up to a few times otherwise).
/// `None` if the normal equations are singular before any update is made.
fn irls(
    a: &GreyFrame,
    b: &GreyFrame,
    mask_a: Option<&[bool]>,
    mask_b: Option<&[bool]>,
    mut theta: AffineParams,
) -> Option<AffineParams> {
    let grad = b.gradients();
    let mut any_update = false;
    for _ in 0..MAX_ITERS {
        let lin = linearise(a, b, &grad, mask_a, mask_b, &theta);
        if lin.rows.len() < 6 {
            return any_update.then_some(theta);
        }
        let (med, c) = lin.scale();

        let mut hm = Matrix6::<f64>::zeros();
        let mut g = Vector6::<f64>::zeros();
        for (r, j) in &lin.rows {
            let u = r / c;
            if u.abs() >= 1.0 {
                continue;
            }
            let wt = (1.0 - u * u).powi(2);
            let jv = Vector6::from_column_slice(j);
            hm += wt * jv * jv.transpose();
            g += wt * *r * jv;
        }
        let Some(delta) = solve(&hm, &g) else {
            return any_update.then_some(theta);
        };
        let loss = lin.loss(med, c);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..6 {
            let mut trial = theta;
            for k in 0..6 {
                trial.0[k] -= step * delta[k];
            }
            let tl = linearise(a, b, &grad, mask_a, mask_b, &trial);
            if tl.rows.len() >= 6 && tl.loss(med, c) <= loss {
                accepted = Some(trial);
                break;
            }
            step *= 0.5;
        }
        let Some(next) = accepted else { break };
        theta = next;
        any_update = true;
        if step * delta.norm() < UPDATE_TOL {
            break;
        }
    }
    Some(theta)
}

/// Largest displacement of a frame corner between two warps.
fn corner_shift(p: &AffineParams, q: &AffineParams, w: usize, h: usize) -> f64 {
    let (w, h) = ((w - 1) as f64, (h - 1) as f64);
    [(0.0, 0.0), (w, 0.0), (0.0, h), (w, h)]
        .iter()
        .map(|&(x, y)| {
            let (a, b) = (p.apply(x, y), q.apply(x, y));
            ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
        })
        .fold(0.0, f64::max)
}

/// Solves `H δ = g` by Cholesky after Jacobi scaling, rejecting
/// ill-conditioned systems.
fn solve(hm: &Matrix6<f64>, g: &Vector6<f64>) -> Option<Vector6<f64>> {
    let diag = hm.diagonal();
    if diag.iter().any(|&d| !(d > 1e-12)) {
        return None;
    }
    let s = diag.map(|d| 1.0 / d.sqrt());
    let scaled = Matrix6::from_fn(|i, j| hm[(i, j)] * s[i] * s[j]);
    let eig = SymmetricEigen::new(scaled);
    if eig.eigenvalues.min() < 1e-9 * eig.eigenvalues.max() {
        return None;
    }
    let chol = scaled.cholesky()?;
    let z = chol.solve(&g.component_mul(&s));
    Some(z.component_mul(&s))
}

fn median(v: &mut [f64]) -> f64 {
    let n = v.len();
    let mid = n / 2;
    let (_, m, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    let m = *m;
    if n % 2 == 1 {
        m
    } else {
        let lower = v[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lower + m) / 2.0
    }
}

/// Warps from every frame to the reference frame.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineChain {
    pub reference: usize,
    /// `θ_{n,ref}` for each frame `n`.
    pub warps: Vec<AffineParams>,
    /// Frames whose chain includes a degraded pairwise estimate.
    pub degraded: Vec<bool>,
}

impl AffineChain {
    pub fn identity(frames: usize) -> Self {
        Self {
            reference: frames / 2,
            warps: vec![AffineParams::IDENTITY; frames],
            degraded: vec![false; frames],
        }
    }

    /// Chains pairwise warps `θ_{n,n+1}` into warps to the middle frame.
    pub fn from_pairwise(pairs: &[MotionEstimate]) -> Result<Self> {
        let frames = pairs.len() + 1;
        let r = frames / 2;
        let mut chain = Self::identity(frames);
        for n in (0..r).rev() {
            chain.warps[n] = chain.warps[n + 1].compose(&pairs[n].params);
            chain.degraded[n] = chain.degraded[n + 1] || pairs[n].degraded;
        }
        for n in r + 1..frames {
            chain.warps[n] = chain.warps[n - 1].compose(&pairs[n - 1].params.invert()?);
            chain.degraded[n] = chain.degraded[n - 1] || pairs[n - 1].degraded;
        }
        Ok(chain)
    }
}

/// A realigned video with its mask and warps.
#[derive(Clone, Debug)]
pub struct Aligned {
    pub u: VideoVolume,
    pub mask: OcclusionMask,
    pub chain: AffineChain,
}

/// Estimates the chain of `u` and realigns it to the middle frame.
pub fn align_video(u: &VideoVolume, mask: &OcclusionMask) -> Result<Aligned> {
    mask.occluded.check_dims(u.dims())?;
    let chain = estimate_chain(u, mask)?;
    let (au, am) = warp_to_reference(u, mask, &chain)?;
    Ok(Aligned { u: au, mask: am, chain })
}

/// Pairwise estimation and chaining only.
pub fn estimate_chain(u: &VideoVolume, mask: &OcclusionMask) -> Result<AffineChain> {
    let d = u.dims();
    let unusable = mask.unusable();
    let frames: Vec<GreyFrame> = (0..d.frames).map(|t| GreyFrame::from_video(u, t)).collect();
    let pairs: Vec<MotionEstimate> = (0..d.frames.saturating_sub(1))
        .into_par_iter()
        .map(|n| {
            estimate_affine_masked(&frames[n], &frames[n + 1], Some(unusable.frame(n)), Some(unusable.frame(n + 1)))
        })
        .collect();
    AffineChain::from_pairwise(&pairs)
}

/// Resamples every frame into the reference frame's coordinates.
///
/// Aligned pixels whose source lies outside the original frame are flagged
/// invalid; a pixel is occluded when any pixel of its interpolation
/// footprint is, and in addition every pixel touched by the image of an
/// occluded pixel is occluded.
pub fn warp_to_reference(
    u: &VideoVolume,
    mask: &OcclusionMask,
    chain: &AffineChain,
) -> Result<(VideoVolume, OcclusionMask)> {
    let d = u.dims();
    let (w, h) = (d.width, d.height);
    let mut out = u.clone();
    let mut occ = mask.occluded.clone();
    let mut inv = mask.invalid.clone();
    let inverses: Vec<AffineParams> = chain.warps.iter().map(|t| t.invert()).collect::<Result<_>>()?;
    for t in 0..d.frames {
        let theta = chain.warps[t];
        if theta.is_identity() {
            continue;
        }
        let src_u = u.frame(t);
        let src_o = mask.occluded.frame(t);
        let src_i = mask.invalid.frame(t);
        let inv_t = inverses[t];
        let mut fu = vec![[0.0; 3]; w * h];
        let mut fo = vec![false; w * h];
        let mut fi = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let (sx, sy) = inv_t.apply(x as f64, y as f64);
                let fp = Footprint::new(sx, sy, w, h);
                let mut c = [0.0; 3];
                for (j, wt) in fp.taps() {
                    for k in 0..3 {
                        c[k] += wt * src_u[j][k];
                    }
                    fo[i] |= src_o[j];
                    fi[i] |= src_i[j];
                }
                fu[i] = c;
                let in_frame = sx >= -1e-9 && sy >= -1e-9 && sx <= (w - 1) as f64 + 1e-9 && sy <= (h - 1) as f64 + 1e-9;
                fi[i] |= !in_frame;
            }
        }
        for (i, &o) in src_o.iter().enumerate() {
            if o {
                let (x, y) = theta.apply((i % w) as f64, (i / w) as f64);
                let fp = Footprint::new(x, y, w, h);
                for j in fp.idx {
                    fo[j] = true;
                }
            }
        }
        out.frame_mut(t).copy_from_slice(&fu);
        occ.frame_mut(t).copy_from_slice(&fo);
        inv.frame_mut(t).copy_from_slice(&fi);
    }
    Ok((out, OcclusionMask::with_invalid(occ, inv)?))
}

/// Pastes the aligned result back into the original video. Only pixels
/// occluded in `original_mask` are replaced; each is sampled from the
/// aligned frame at its warped position.
pub fn unwarp_video(
    aligned: &VideoVolume,
    chain: &AffineChain,
    original: &VideoVolume,
    original_mask: &BoolVolume,
) -> Result<VideoVolume> {
    aligned.check_dims(original.dims())?;
    original_mask.check_dims(original.dims())?;
    let d = original.dims();
    let (w, h) = (d.width, d.height);
    let mut out = original.clone();
    for i in original_mask.indices() {
        let v = d.coords(i);
        let theta = chain.warps[v.t];
        if theta.is_identity() {
            out[i] = aligned[i];
            continue;
        }
        let (x, y) = theta.apply(v.x as f64, v.y as f64);
        let frame = aligned.frame(v.t);
        let mut c = [0.0; 3];
        for (j, wt) in Footprint::new(x, y, w, h).taps() {
            for k in 0..3 {
                c[k] += wt * frame[j][k];
            }
        }
        out[i] = c;
    }
    Ok(out)
}

/// Largest distance between the images of the frame corners under two warps.
pub fn corner_error(est: &AffineParams, truth: &AffineParams, width: usize, height: usize) -> f64 {
    let (w, h) = ((width - 1) as f64, (height - 1) as f64);
    [(0.0, 0.0), (w, 0.0), (0.0, h), (w, h)]
        .iter()
        .map(|&(x, y)| {
            let (a, b) = est.apply(x, y);
            let (c, d) = truth.apply(x, y);
            ((a - c).powi(2) + (b - d).powi(2)).sqrt()
        })
        .fold(0.0, f64::max)
}

/// Occlusion of a whole video with nothing occluded, for callers without a mask.
pub fn no_mask(u: &VideoVolume) -> OcclusionMask {
    OcclusionMask::new(Volume::filled(u.dims(), false))
}
