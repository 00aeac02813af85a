//! The multi-resolution inpainting driver.

use rayon::prelude::*;

use crate::distance::{DistanceParams, PatchCost};
use crate::error::{Error, Result};
use crate::features::{build_texture_pyramid, compute_texture_features_masked, default_feature_radius};
use crate::init::onion_peel_init;
use crate::motion::{align_video, unwarp_video, AffineChain};
use crate::patchmatch::{random_init, search, shift_costs, SearchParams};
use crate::reconstruct::{final_reconstruct, reconstruct, ReconstructionMode};
use crate::rng::{derive_seed, stream, TAG_LEVEL, TAG_REPAIR};
use crate::volume::{
    build_occlusion_pyramid, build_video_pyramid_masked, dilate_mask, valid_source_mask, BoolVolume, Dims,
    OcclusionMask, PatchShape, Shift, ShiftMap, TextureVolume, VideoVolume, Volume, SENTINEL,
};

/// Every tunable of the inpainting run.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub shape: PatchShape,
    /// Weight of the texture features in the patch distance.
    pub lambda: f64,
    /// Pyramid depth; `None` picks it from the occlusion size.
    pub levels: Option<usize>,
    /// Maximum search/reconstruction alternations per level.
    pub max_iters: usize,
    /// Per-level stopping threshold on the mean colour change.
    pub stop_eps: f64,
    pub pm_iters: usize,
    pub rho: f64,
    pub r_max: Option<usize>,
    pub mode: ReconstructionMode,
    pub align: bool,
    pub texture: bool,
    /// Half-width of the texture averaging window; `None` derives it from the depth.
    pub feature_radius: Option<usize>,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            shape: PatchShape::default(),
            lambda: 50.0,
            levels: None,
            max_iters: 20,
            stop_eps: 0.1,
            pm_iters: 10,
            rho: 0.5,
            r_max: None,
            mode: ReconstructionMode::Weighted,
            align: true,
            texture: true,
            feature_radius: None,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.search_params().validate()?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be a finite nonnegative number, got {}", self.lambda)));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max-iters must be at least 1".into()));
        }
        if !(self.stop_eps >= 0.0) {
            return Err(Error::Config(format!("stop-eps must be nonnegative, got {}", self.stop_eps)));
        }
        if self.mode == ReconstructionMode::BestPatch {
            return Err(Error::Config("the iteration reconstruction must be weighted or unweighted".into()));
        }
        Ok(())
    }

    pub fn search_params(&self) -> SearchParams {
        SearchParams {
            iterations: self.pm_iters,
            rho: self.rho,
            r_max: self.r_max,
            seed: self.seed,
        }
    }

    fn distance_params(&self) -> DistanceParams {
        DistanceParams::new(if self.texture { self.lambda } else { 0.0 }, self.shape)
    }
}

/// One line of the convergence log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyRow {
    /// Pyramid level, 1 being the finest.
    pub level: usize,
    /// Alternation index within the level, from 1.
    pub iteration: usize,
    /// Stopping criterion after this alternation.
    pub e: f64,
    /// Patch energy over the occlusion after this alternation.
    pub energy: f64,
}

/// Result of [`inpaint_detailed`].
#[derive(Clone, Debug)]
pub struct InpaintReport {
    pub output: VideoVolume,
    pub levels: usize,
    /// Onion layers peeled at the coarsest level.
    pub init_layers: usize,
    pub log: Vec<EnergyRow>,
    /// Warps used for realignment, when enabled.
    pub chain: Option<AffineChain>,
    /// Finest-level shift map (in aligned coordinates when realigned).
    pub shifts: ShiftMap,
    /// Finest-level occlusion the final pass ran on.
    pub mask: OcclusionMask,
}

/// Largest per-frame bounding-box side of the occlusion.
fn max_box_side(mask: &BoolVolume) -> usize {
    let d = mask.dims();
    let mut side = 0;
    for t in 0..d.frames {
        let f = mask.frame(t);
        let (mut x0, mut x1, mut y0, mut y1) = (usize::MAX, 0, usize::MAX, 0);
        for (i, _) in f.iter().enumerate().filter(|(_, &b)| b) {
            let (x, y) = (i % d.width, i / d.width);
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if x0 != usize::MAX {
            side = side.max(x1 - x0 + 1).max(y1 - y0 + 1);
        }
    }
    side
}

/// Smallest depth at which the occlusion's largest per-frame box side is at
/// most twice the spatial patch size, limited so the coarsest level is still
/// at least one patch wide.
pub fn choose_num_levels(mask: &BoolVolume, shape: PatchShape) -> Result<usize> {
    let d = mask.dims();
    let side = max_box_side(mask);
    if side > d.width.max(d.height) {
        return Err(Error::Config("occlusion is larger than the video".into()));
    }
    let [sx, sy, _] = shape.extents();
    let p = sx.max(sy);
    let mut levels = 1;
    while side as f64 / (1u64 << (levels - 1)) as f64 > 2.0 * p as f64 {
        levels += 1;
    }
    let min_side = d.width.min(d.height);
    while levels > 1 && (min_side >> (levels - 1) < p || (1usize << (levels - 1)) > min_side) {
        levels -= 1;
    }
    Ok(levels)
}

/// Largest depth up to `levels` at which every level still has a valid
/// source patch.
fn usable_depth(mask: &OcclusionMask, levels: usize, shape: PatchShape) -> Result<usize> {
    let mut levels = levels;
    while levels > 1 {
        let masks = build_occlusion_pyramid(mask, levels)?;
        if masks.iter().all(|m| valid_source_mask(m, shape).any()) {
            break;
        }
        levels -= 1;
    }
    Ok(levels)
}

/// Nearest-neighbour upsampling of a shift map to `fine` dimensions:
/// spatial components are doubled, temporal ones kept.
pub fn upsample_shift_map(coarse: &ShiftMap, fine: Dims) -> ShiftMap {
    let cd = coarse.dims();
    let mut out = ShiftMap::new(fine);
    for i in 0..fine.len() {
        let v = fine.coords(i);
        let (cx, cy) = ((v.x / 2).min(cd.width - 1), (v.y / 2).min(cd.height - 1));
        if let Some(s) = coarse.get(cd.index(cx, cy, v.t)) {
            out.set(i, Shift::new(2 * s.dx, 2 * s.dy, s.dt));
        }
    }
    out
}

/// Counts from [`repair_shift_map`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RepairStats {
    pub targets: usize,
    pub valid: usize,
    pub snapped: usize,
    pub randomised: usize,
}

/// Makes every target's shift land in `sources`. An invalid shift is moved
/// to the nearest source within one voxel of its end point, else to the
/// first source met walking from its end point back towards the target,
/// else to a random source.
pub fn repair_shift_map(
    phi: &mut ShiftMap,
    targets: &BoolVolume,
    sources: &BoolVolume,
    seed: u64,
    salt: u64,
) -> Result<RepairStats> {
    let src = sources.indices();
    if src.is_empty() {
        return Err(Error::EmptySourceSet { level: 0 });
    }
    let dims = phi.dims();
    let mut stats = RepairStats::default();
    for p in targets.indices() {
        stats.targets += 1;
        if phi.target(p).is_some_and(|q| sources[q]) {
            stats.valid += 1;
            continue;
        }
        let s = phi.get(p).unwrap_or(Shift::ZERO);
        match snap(dims, p, s, sources) {
            Some(n) => {
                phi.set(p, n);
                stats.snapped += 1;
            }
            None => {
                let mut rng = stream(seed, &[TAG_REPAIR, salt, p as u64]);
                let q = src[rand::Rng::random_range(&mut rng, 0..src.len())];
                phi.set(p, Shift::between(dims, p, q));
                stats.randomised += 1;
            }
        }
    }
    Ok(stats)
}

fn snap(dims: Dims, p: usize, s: Shift, sources: &BoolVolume) -> Option<Shift> {
    let ok = |sh: Shift| dims.offset(p, sh.as_offset()).filter(|&q| sources[q]).map(|_| sh);
    let mut best: Option<(i32, Shift)> = None;
    for dt in -1..=1 {
        for dy in -1..=1 {
            for dx in -1..=1 {
                let c = Shift::new(s.dx + dx, s.dy + dy, s.dt + dt);
                let d2 = dx * dx + dy * dy + dt * dt;
                if ok(c).is_some() && best.is_none_or(|(b, _)| d2 < b) {
                    best = Some((d2, c));
                }
            }
        }
    }
    if let Some((_, c)) = best {
        return Some(c);
    }
    let steps = s.dx.abs().max(s.dy.abs()).max(s.dt.abs());
    for k in 1..steps {
        let f = 1.0 - k as f64 / steps as f64;
        let c = Shift::new(
            (s.dx as f64 * f).round() as i32,
            (s.dy as f64 * f).round() as i32,
            (s.dt as f64 * f).round() as i32,
        );
        if ok(c).is_some() {
            return Some(c);
        }
    }
    None
}

/// Patch energy `Σ_{p∈H} d²(W_p, W_{p+φ(p)})`; infinite if a shift is
/// missing or leaves the volume.
pub fn energy(
    u: &VideoVolume,
    texture: Option<&TextureVolume>,
    phi: &ShiftMap,
    h: &BoolVolume,
    params: DistanceParams,
) -> f64 {
    energy_with(&PatchCost::new(u, texture, params), phi, &h.indices())
}

fn energy_with(cost: &PatchCost<'_>, phi: &ShiftMap, h: &[usize]) -> f64 {
    h.par_iter()
        .map(|&p| match phi.target(p) {
            Some(q) => cost.cost(p, q, &cost.window(p)),
            None => f64::INFINITY,
        })
        .collect::<Vec<f64>>()
        .into_iter()
        .sum()
}

/// Inpaints the voxels set in `mask` and returns the completed video.
pub fn inpaint(u: &VideoVolume, mask: &BoolVolume, config: &PipelineConfig) -> Result<VideoVolume> {
    Ok(inpaint_detailed(u, mask, config)?.output)
}

/// [`inpaint`] with diagnostics.
pub fn inpaint_detailed(u: &VideoVolume, mask: &BoolVolume, config: &PipelineConfig) -> Result<InpaintReport> {
    config.validate()?;
    let dims = u.dims().validate()?;
    mask.check_dims(dims)?;
    if let Some(i) = u.data().iter().position(|c| c.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite(i));
    }
    if mask.count() == dims.len() {
        return Err(Error::FullyOccluded);
    }
    if !mask.any() {
        return Ok(InpaintReport {
            output: u.clone(),
            levels: 0,
            init_layers: 0,
            log: Vec::new(),
            chain: None,
            shifts: ShiftMap::new(dims),
            mask: OcclusionMask::new(mask.clone()),
        });
    }

    let (work_u, work_mask, chain) = if config.align && dims.frames > 1 {
        let a = align_video(u, &OcclusionMask::new(mask.clone()))?;
        (a.u, a.mask, Some(a.chain))
    } else {
        (u.clone(), OcclusionMask::new(mask.clone()), None)
    };
    if !work_mask.known().any() {
        return Err(Error::FullyOccluded);
    }

    let levels = match config.levels {
        Some(l) => l,
        None => usable_depth(&work_mask, choose_num_levels(&work_mask.occluded, config.shape)?, config.shape)?,
    };
    let core = inpaint_aligned(&work_u, &work_mask, levels, config)?;

    let output = match &chain {
        Some(c) => unwarp_video(&core.u, c, u, mask)?,
        None => {
            let mut out = u.clone();
            for p in mask.indices() {
                out[p] = core.u[p];
            }
            out
        }
    };
    Ok(InpaintReport {
        output,
        levels,
        init_layers: core.layers,
        log: core.log,
        chain,
        shifts: core.shifts,
        mask: work_mask,
    })
}

struct CoreResult {
    u: VideoVolume,
    shifts: ShiftMap,
    layers: usize,
    log: Vec<EnergyRow>,
}

fn inpaint_aligned(u: &VideoVolume, mask: &OcclusionMask, levels: usize, config: &PipelineConfig) -> Result<CoreResult> {
    let shape = config.shape;
    let dparams = config.distance_params();
    let sparams = config.search_params();
    let masks = build_occlusion_pyramid(mask, levels)?;
    let mut videos = build_video_pyramid_masked(u, mask, levels)?;
    let mut textures: Option<Vec<TextureVolume>> = if config.texture {
        let radius = config.feature_radius.unwrap_or_else(|| default_feature_radius(levels));
        let t = compute_texture_features_masked(u, &mask.known(), radius);
        Some(build_texture_pyramid(&t, levels)?)
    } else {
        None
    };
    for (l, m) in masks.iter().enumerate() {
        for p in m.occluded.indices() {
            videos[l][p] = [SENTINEL; 3];
            if let Some(t) = textures.as_mut() {
                t[l][p] = [0.0; 2];
            }
        }
    }
    let sources: Vec<BoolVolume> = masks.iter().map(|m| valid_source_mask(m, shape)).collect();
    let targets: Vec<BoolVolume> = masks.iter().map(|m| dilate_mask(m, shape)).collect();
    for (l, s) in sources.iter().enumerate() {
        if !s.any() {
            return Err(Error::EmptySourceSet { level: l + 1 });
        }
    }

    let top = levels - 1;
    let phi = random_init(&targets[top], &sources[top], derive_seed(config.seed, &[TAG_LEVEL, top as u64]))?;
    let init = onion_peel_init(
        &videos[top],
        textures.as_ref().map(|t| &t[top]),
        phi,
        &masks[top],
        dparams,
        sparams,
        config.mode,
    )
    .map_err(|e| match e {
        Error::EmptySourceSet { .. } => Error::EmptySourceSet { level: levels },
        e => e,
    })?;
    let layers = init.layers;
    videos[top] = init.u;
    if let (Some(t), Some(nt)) = (textures.as_mut(), init.texture) {
        t[top] = nt;
    }
    let mut phi = init.field.shifts;
    let mut log = Vec::new();

    let mut level = top;
    loop {
        let m = &masks[level];
        let h = m.occluded.indices();
        let tgt = targets[level].indices();
        let mut u_l = std::mem::replace(&mut videos[level], Volume::filled(Dims::new(1, 1, 1), [0.0; 3]));
        let mut t_l = textures.as_mut().map(|t| std::mem::replace(&mut t[level], Volume::filled(Dims::new(1, 1, 1), [0.0; 2])));
        let valid = m.invalid.not();
        let has_invalid = m.invalid.any();

        for k in 0..config.max_iters {
            let before: Vec<[f64; 3]> = h.iter().map(|&p| u_l[p]).collect();
            let field = {
                let mut cost = PatchCost::new(&u_l, t_l.as_ref(), dparams);
                if has_invalid {
                    cost = cost.with_known(&valid);
                }
                let salt = derive_seed(TAG_LEVEL, &[level as u64, k as u64]);
                search(&cost, phi, &tgt, &sources[level], sparams, salt)?
            };
            phi = field.shifts;
            let (nu, nt) = reconstruct(&u_l, t_l.as_ref(), &phi, &field.costs, &m.occluded, shape, config.mode);
            u_l = nu;
            t_l = nt;
            let diff: f64 = h
                .iter()
                .zip(&before)
                .map(|(&p, b)| (0..3).map(|c| (u_l[p][c] - b[c]).powi(2)).sum::<f64>())
                .sum();
            let e = diff.sqrt() / (3.0 * h.len() as f64);
            let mut cost = PatchCost::new(&u_l, t_l.as_ref(), dparams);
            if has_invalid {
                cost = cost.with_known(&valid);
            }
            let en = energy_with(&cost, &phi, &h);
            log.push(EnergyRow {
                level: level + 1,
                iteration: k + 1,
                e,
                energy: en,
            });
            if e <= config.stop_eps {
                break;
            }
        }

        if level == 0 {
            let mut cost = PatchCost::new(&u_l, t_l.as_ref(), dparams);
            if has_invalid {
                cost = cost.with_known(&valid);
            }
            let costs = shift_costs(&cost, &phi, &tgt);
            let out = final_reconstruct(&u_l, &phi, &costs, &m.occluded, shape);
            return Ok(CoreResult {
                u: out,
                shifts: phi,
                layers,
                log,
            });
        }

        // Carry the shift map and its recorded distances to the next level.
        let fine = level - 1;
        let fd = masks[fine].dims();
        let coarse_costs = {
            let mut cost = PatchCost::new(&u_l, t_l.as_ref(), dparams);
            if has_invalid {
                cost = cost.with_known(&valid);
            }
            shift_costs(&cost, &phi, &tgt)
        };
        let mut fine_phi = upsample_shift_map(&phi, fd);
        repair_shift_map(
            &mut fine_phi,
            &targets[fine],
            &sources[fine],
            config.seed,
            derive_seed(TAG_REPAIR, &[fine as u64]),
        )?;
        let cd = coarse_costs.dims();
        let fine_costs = Volume::from_fn(fd, |v| {
            if targets[fine][fd.voxel_index(v)] {
                coarse_costs[cd.index((v.x / 2).min(cd.width - 1), (v.y / 2).min(cd.height - 1), v.t)]
            } else {
                f64::INFINITY
            }
        });
        let (nu, nt) = reconstruct(
            &videos[fine],
            textures.as_ref().map(|t| &t[fine]),
            &fine_phi,
            &patch_missing_costs(&fine_costs, &targets[fine]),
            &masks[fine].occluded,
            shape,
            config.mode,
        );
        videos[fine] = nu;
        if let (Some(t), Some(nt)) = (textures.as_mut(), nt) {
            t[fine] = nt;
        }
        phi = fine_phi;
        level = fine;
    }
}

/// Targets whose coarse parent had no recorded distance still need to
/// contribute; they get the largest finite distance present.
fn patch_missing_costs(costs: &Volume<f64>, targets: &BoolVolume) -> Volume<f64> {
    let worst = costs.data().iter().copied().filter(|c| c.is_finite()).fold(0.0, f64::max);
    Volume::from_fn(costs.dims(), |v| {
        let i = costs.dims().voxel_index(v);
        if targets[i] && !costs[i].is_finite() {
            worst
        } else {
            costs[i]
        }
    })
}
