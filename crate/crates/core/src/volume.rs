//! Volumetric containers and the set arithmetic built on them.
//!
//! All volumes are stored frame-major with `x` varying fastest, so the
//! linear index of `(x, y, t)` is `(t * height + y) * width + x`. Throughout
//! the crate "lexicographic order" means increasing linear index.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Extent of a volume in voxels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dims {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
}

impl Dims {
    pub const fn new(width: usize, height: usize, frames: usize) -> Self {
        Self {
            width,
            height,
            frames,
        }
    }

    pub fn validate(self) -> Result<Self> {
        if self.width == 0 || self.height == 0 || self.frames == 0 {
            return Err(Error::EmptyVolume(self.width, self.height, self.frames));
        }
        Ok(self)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.width * self.height * self.frames
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn frame_len(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, t: usize) -> usize {
        debug_assert!(x < self.width && y < self.height && t < self.frames);
        (t * self.height + y) * self.width + x
    }

    #[inline]
    pub fn voxel_index(&self, v: Voxel) -> usize {
        self.index(v.x, v.y, v.t)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> Voxel {
        let x = index % self.width;
        let rest = index / self.width;
        Voxel {
            x,
            y: rest % self.height,
            t: rest / self.height,
        }
    }

    #[inline]
    pub fn contains(&self, x: i64, y: i64, t: i64) -> bool {
        x >= 0
            && y >= 0
            && t >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && (t as usize) < self.frames
    }

    /// Linear index of `p + offset`, if it lies inside the volume.
    #[inline]
    pub fn offset(&self, p: usize, offset: [i64; 3]) -> Option<usize> {
        let v = self.coords(p);
        let x = v.x as i64 + offset[0];
        let y = v.y as i64 + offset[1];
        let t = v.t as i64 + offset[2];
        self.contains(x, y, t)
            .then(|| self.index(x as usize, y as usize, t as usize))
    }

    /// Spatial halving with ceiling division; frame count is kept.
    pub fn halved(&self) -> Dims {
        Dims::new(self.width.div_ceil(2), self.height.div_ceil(2), self.frames)
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.width, self.height, self.frames)
    }
}

/// A spatio-temporal position.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Voxel {
    pub x: usize,
    pub y: usize,
    pub t: usize,
}

impl Voxel {
    pub const fn new(x: usize, y: usize, t: usize) -> Self {
        Self { x, y, t }
    }
}

/// Dense per-voxel storage.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume<T> {
    dims: Dims,
    data: Vec<T>,
}

impl<T: Clone> Volume<T> {
    pub fn filled(dims: Dims, value: T) -> Self {
        Self {
            dims,
            data: vec![value; dims.len()],
        }
    }
}

impl<T> Volume<T> {
    pub fn from_vec(dims: Dims, data: Vec<T>) -> Result<Self> {
        let dims = dims.validate()?;
        if data.len() != dims.len() {
            return Err(Error::DataLength {
                expected: dims.len(),
                actual: data.len(),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(Voxel) -> T) -> Self {
        let data = (0..dims.len()).map(|i| f(dims.coords(i))).collect();
        Self { dims, data }
    }

    #[inline]
    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, t: usize) -> &T {
        &self.data[self.dims.index(x, y, t)]
    }

    #[inline]
    pub fn at_mut(&mut self, x: usize, y: usize, t: usize) -> &mut T {
        let i = self.dims.index(x, y, t);
        &mut self.data[i]
    }

    pub fn frame(&self, t: usize) -> &[T] {
        let n = self.dims.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [T] {
        let n = self.dims.frame_len();
        &mut self.data[t * n..(t + 1) * n]
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Volume<U> {
        Volume {
            dims: self.dims,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn check_dims(&self, expected: Dims) -> Result<()> {
        if self.dims != expected {
            return Err(Error::DimensionMismatch {
                expected: expected.to_string(),
                actual: self.dims.to_string(),
            });
        }
        Ok(())
    }
}

impl<T> Index<usize> for Volume<T> {
    type Output = T;

    #[inline]
    fn index(&self, i: usize) -> &T {
        &self.data[i]
    }
}

impl<T> IndexMut<usize> for Volume<T> {
    #[inline]
    fn index_mut(&mut self, i: usize) -> &mut T {
        &mut self.data[i]
    }
}

impl<T> Index<Voxel> for Volume<T> {
    type Output = T;

    #[inline]
    fn index(&self, v: Voxel) -> &T {
        &self.data[self.dims.voxel_index(v)]
    }
}

impl<T> IndexMut<Voxel> for Volume<T> {
    #[inline]
    fn index_mut(&mut self, v: Voxel) -> &mut T {
        let i = self.dims.voxel_index(v);
        &mut self.data[i]
    }
}

pub type Rgb = [f64; 3];

/// Colour video `u`: three real channels per voxel, nominally in `[0, 255]`.
pub type VideoVolume = Volume<Rgb>;

/// Per-voxel texture feature `(Tx, Ty)`.
pub type TextureVolume = Volume<[f64; 2]>;

pub type BoolVolume = Volume<bool>;

impl Volume<Rgb> {
    /// Builds a colour volume, rejecting non-finite samples.
    pub fn from_rgb(dims: Dims, data: Vec<Rgb>) -> Result<Self> {
        if let Some(i) = data.iter().position(|c| c.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite(i));
        }
        Self::from_vec(dims, data)
    }
}

impl Volume<bool> {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn any(&self) -> bool {
        self.data.iter().any(|&b| b)
    }

    /// Linear indices of set voxels, in lexicographic order.
    pub fn indices(&self) -> Vec<usize> {
        self.data
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }

    pub fn not(&self) -> BoolVolume {
        self.map(|&b| !b)
    }

    pub fn and(&self, other: &BoolVolume) -> BoolVolume {
        self.zip(other, |a, b| a && b)
    }

    pub fn or(&self, other: &BoolVolume) -> BoolVolume {
        self.zip(other, |a, b| a || b)
    }

    pub fn and_not(&self, other: &BoolVolume) -> BoolVolume {
        self.zip(other, |a, b| a && !b)
    }

    fn zip(&self, other: &BoolVolume, f: impl Fn(bool, bool) -> bool) -> BoolVolume {
        assert_eq!(self.dims, other.dims, "mask dimensions differ");
        Volume {
            dims: self.dims,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }
}

/// The occlusion `H` together with voxels that carry no usable colour.
#[derive(Clone, Debug, PartialEq)]
pub struct OcclusionMask {
    pub occluded: BoolVolume,
    pub invalid: BoolVolume,
}

impl OcclusionMask {
    pub fn new(occluded: BoolVolume) -> Self {
        let invalid = Volume::filled(occluded.dims(), false);
        Self { occluded, invalid }
    }

    pub fn with_invalid(occluded: BoolVolume, invalid: BoolVolume) -> Result<Self> {
        invalid.check_dims(occluded.dims())?;
        Ok(Self { occluded, invalid })
    }

    pub fn empty(dims: Dims) -> Self {
        Self::new(Volume::filled(dims, false))
    }

    pub fn dims(&self) -> Dims {
        self.occluded.dims()
    }

    /// Voxels that are occluded or invalid.
    pub fn unusable(&self) -> BoolVolume {
        self.occluded.or(&self.invalid)
    }

    /// The data set `D`: voxels that are neither occluded nor invalid.
    pub fn known(&self) -> BoolVolume {
        self.unusable().not()
    }
}

/// Patch cuboid extents; every extent is odd.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PatchShape {
    sx: usize,
    sy: usize,
    st: usize,
}

impl PatchShape {
    pub fn new(sx: usize, sy: usize, st: usize) -> Result<Self> {
        if [sx, sy, st].iter().any(|&s| s == 0 || s % 2 == 0) {
            return Err(Error::InvalidPatchShape(sx, sy, st));
        }
        Ok(Self { sx, sy, st })
    }

    pub fn cube(side: usize) -> Result<Self> {
        Self::new(side, side, side)
    }

    pub fn extents(&self) -> [usize; 3] {
        [self.sx, self.sy, self.st]
    }

    /// Half extents `(sx/2, sy/2, st/2)`.
    pub fn half(&self) -> [usize; 3] {
        [self.sx / 2, self.sy / 2, self.st / 2]
    }

    /// Number of voxels `N` in a full patch.
    pub fn len(&self) -> usize {
        self.sx * self.sy * self.st
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl Default for PatchShape {
    fn default() -> Self {
        Self {
            sx: 5,
            sy: 5,
            st: 5,
        }
    }
}

/// A displacement `(dx, dy, dt)` from a voxel to its correspondent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct Shift {
    pub dx: i32,
    pub dy: i32,
    pub dt: i32,
}

impl Shift {
    pub const ZERO: Shift = Shift::new(0, 0, 0);

    pub const fn new(dx: i32, dy: i32, dt: i32) -> Self {
        Self { dx, dy, dt }
    }

    /// Shift taking `from` to `to` (both linear indices in `dims`).
    pub fn between(dims: Dims, from: usize, to: usize) -> Self {
        let a = dims.coords(from);
        let b = dims.coords(to);
        Self::new(
            b.x as i32 - a.x as i32,
            b.y as i32 - a.y as i32,
            b.t as i32 - a.t as i32,
        )
    }

    pub fn as_offset(&self) -> [i64; 3] {
        [self.dx as i64, self.dy as i64, self.dt as i64]
    }
}

/// Shift map `φ`: an optional shift per voxel.
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftMap {
    field: Volume<Option<Shift>>,
}

impl ShiftMap {
    pub fn new(dims: Dims) -> Self {
        Self {
            field: Volume::filled(dims, None),
        }
    }

    pub fn dims(&self) -> Dims {
        self.field.dims()
    }

    #[inline]
    pub fn get(&self, index: usize) -> Option<Shift> {
        self.field[index]
    }

    #[inline]
    pub fn set(&mut self, index: usize, shift: Shift) {
        self.field[index] = Some(shift);
    }

    #[inline]
    pub fn clear(&mut self, index: usize) {
        self.field[index] = None;
    }

    /// Linear index of `p + φ(p)` when the shift is defined and lands in bounds.
    #[inline]
    pub fn target(&self, index: usize) -> Option<usize> {
        let s = self.field[index]?;
        self.dims().offset(index, s.as_offset())
    }

    pub fn defined(&self) -> BoolVolume {
        self.field.map(|s| s.is_some())
    }

    pub fn as_volume(&self) -> &Volume<Option<Shift>> {
        &self.field
    }

    /// True when every voxel of `targets` has a shift landing in `sources`.
    pub fn is_valid_on(&self, targets: &BoolVolume, sources: &BoolVolume) -> bool {
        targets
            .indices()
            .into_iter()
            .all(|i| self.target(i).is_some_and(|q| sources[q]))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Axis {
    X,
    Y,
    T,
}

impl Axis {
    pub(crate) const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::T];

    fn geometry(self, dims: Dims) -> (usize, usize) {
        match self {
            Axis::X => (1, dims.width),
            Axis::Y => (dims.width, dims.height),
            Axis::T => (dims.frame_len(), dims.frames),
        }
    }

    fn line_starts(self, dims: Dims) -> Vec<usize> {
        let mut starts = Vec::new();
        match self {
            Axis::X => {
                for t in 0..dims.frames {
                    for y in 0..dims.height {
                        starts.push(dims.index(0, y, t));
                    }
                }
            }
            Axis::Y => {
                for t in 0..dims.frames {
                    for x in 0..dims.width {
                        starts.push(dims.index(x, 0, t));
                    }
                }
            }
            Axis::T => starts.extend(0..dims.frame_len()),
        }
        starts
    }
}

/// How a window test treats positions outside the volume.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Window {
    /// True if any in-bounds voxel of the window is set.
    Any,
    /// True if every in-bounds voxel of the window is set.
    AllClipped,
    /// True if the window lies fully in bounds and every voxel is set.
    AllInside,
}

/// One-dimensional window test of half-width `half` along `axis`.
pub(crate) fn window_pass(vol: &BoolVolume, axis: Axis, half: usize, mode: Window) -> BoolVolume {
    let dims = vol.dims();
    let (stride, n) = axis.geometry(dims);
    let mut out = Volume::filled(dims, false);
    let mut prefix = vec![0usize; n + 1];
    for start in axis.line_starts(dims) {
        for i in 0..n {
            prefix[i + 1] = prefix[i] + vol[start + i * stride] as usize;
        }
        for i in 0..n {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n - 1);
            let set = prefix[hi + 1] - prefix[lo];
            out[start + i * stride] = match mode {
                Window::Any => set > 0,
                Window::AllClipped => set == hi - lo + 1,
                Window::AllInside => i >= half && i + half < n && set == 2 * half + 1,
            };
        }
    }
    out
}

fn cuboid_pass(vol: &BoolVolume, half: [usize; 3], mode: Window) -> BoolVolume {
    Axis::ALL
        .iter()
        .zip(half)
        .fold(vol.clone(), |acc, (&axis, h)| window_pass(&acc, axis, h, mode))
}

/// `D̃`: centres whose whole patch is in bounds, unoccluded and valid.
pub fn valid_source_mask(mask: &OcclusionMask, shape: PatchShape) -> BoolVolume {
    cuboid_pass(&mask.known(), shape.half(), Window::AllInside)
}

/// `H̃`: the occlusion dilated by the patch cuboid, clipped at the borders.
pub fn dilate_mask(mask: &OcclusionMask, shape: PatchShape) -> BoolVolume {
    dilate(&mask.occluded, shape)
}

pub(crate) fn dilate(vol: &BoolVolume, shape: PatchShape) -> BoolVolume {
    cuboid_pass(vol, shape.half(), Window::Any)
}

pub(crate) fn erode_cuboid(vol: &BoolVolume, half: [usize; 3], inside_counts: bool) -> BoolVolume {
    let mode = if inside_counts {
        Window::AllClipped
    } else {
        Window::AllInside
    };
    cuboid_pass(vol, half, mode)
}

const BINOMIAL5: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// Mirror an index into `[0, n)` without repeating the edge sample.
#[inline]
pub(crate) fn mirror(i: i64, n: usize) -> usize {
    let n = n as i64;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    m as usize
}

/// Marker stored in voxels that have not received a colour estimate.
pub const SENTINEL: f64 = -1.0;

fn check_levels(dims: Dims, levels: usize) -> Result<()> {
    let too_many = || Error::TooManyLevels {
        levels,
        width: dims.width,
        height: dims.height,
    };
    if levels == 0 || levels > 32 {
        return Err(too_many());
    }
    if (1usize << (levels - 1)) > dims.width.min(dims.height) {
        return Err(too_many());
    }
    Ok(())
}

/// Blur with the 5-tap binomial kernel and keep even samples.
///
/// With `known`, only known samples contribute and the weights are
/// renormalised; output voxels with no known contributor get [`SENTINEL`].
pub(crate) fn reduce_rgb(u: &VideoVolume, known: Option<&BoolVolume>) -> VideoVolume {
    let dims = u.dims();
    let coarse = dims.halved();
    Volume::from_fn(coarse, |v| {
        let mut acc = [0.0; 3];
        let mut wsum = 0.0;
        for (j, wy) in BINOMIAL5.iter().enumerate() {
            let y = mirror(2 * v.y as i64 + j as i64 - 2, dims.height);
            for (i, wx) in BINOMIAL5.iter().enumerate() {
                let x = mirror(2 * v.x as i64 + i as i64 - 2, dims.width);
                let idx = dims.index(x, y, v.t);
                if known.is_some_and(|k| !k[idx]) {
                    continue;
                }
                let w = wx * wy;
                let c = u[idx];
                acc[0] += w * c[0];
                acc[1] += w * c[1];
                acc[2] += w * c[2];
                wsum += w;
            }
        }
        if wsum == 0.0 {
            [SENTINEL; 3]
        } else if known.is_none() {
            acc
        } else {
            acc.map(|a| a / wsum)
        }
    })
}

/// Spatial Gaussian pyramid; level 0 is `u` itself (the finest level).
pub fn build_video_pyramid(u: &VideoVolume, levels: usize) -> Result<Vec<VideoVolume>> {
    build_pyramid_impl(u, None, levels)
}

/// Like [`build_video_pyramid`] but ignores unusable voxels while filtering,
/// so colours next to the occlusion are not mixed with placeholder values.
pub fn build_video_pyramid_masked(
    u: &VideoVolume,
    mask: &OcclusionMask,
    levels: usize,
) -> Result<Vec<VideoVolume>> {
    mask.occluded.check_dims(u.dims())?;
    build_pyramid_impl(u, Some(mask), levels)
}

fn build_pyramid_impl(
    u: &VideoVolume,
    mask: Option<&OcclusionMask>,
    levels: usize,
) -> Result<Vec<VideoVolume>> {
    check_levels(u.dims(), levels)?;
    let masks = match mask {
        Some(m) => Some(build_occlusion_pyramid(m, levels)?),
        None => None,
    };
    let mut out = vec![u.clone()];
    for l in 1..levels {
        let known = masks.as_ref().map(|m| m[l - 1].known());
        out.push(reduce_rgb(&out[l - 1], known.as_ref()));
    }
    Ok(out)
}

fn reduce_mask(m: &BoolVolume) -> BoolVolume {
    let dims = m.dims();
    Volume::from_fn(dims.halved(), |v| {
        let x0 = 2 * v.x;
        let y0 = 2 * v.y;
        (y0..(y0 + 2).min(dims.height))
            .any(|y| (x0..(x0 + 2).min(dims.width)).any(|x| *m.at(x, y, v.t)))
    })
}

/// Conservative occlusion pyramid: a coarse voxel is occluded (or invalid)
/// when any fine voxel it covers is.
pub fn build_occlusion_pyramid(mask: &OcclusionMask, levels: usize) -> Result<Vec<OcclusionMask>> {
    check_levels(mask.dims(), levels)?;
    let mut out = vec![mask.clone()];
    for l in 1..levels {
        let prev = &out[l - 1];
        out.push(OcclusionMask {
            occluded: reduce_mask(&prev.occluded),
            invalid: reduce_mask(&prev.invalid),
        });
    }
    Ok(out)
}

/// Dimensions of pyramid level `level` (0 = finest).
pub fn level_dims(dims: Dims, level: usize) -> Dims {
    let s = 1usize << level;
    Dims::new(dims.width.div_ceil(s), dims.height.div_ceil(s), dims.frames)
}
