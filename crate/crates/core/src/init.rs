//! Onion-peel initialisation of the coarsest level.
//!
//! The occlusion is filled one shell at a time from the outside in. Each
//! shell is matched with distances restricted to voxels already known, and
//! rebuilt only from neighbours whose centres lie outside the remaining
//! occlusion.

use crate::distance::{DistanceParams, PatchCost};
use crate::error::{Error, Result};
use crate::patchmatch::{search, AnnField, SearchParams};
use crate::reconstruct::{layer_reconstruct, ReconstructionMode};
use crate::rng::{derive_seed, TAG_INIT};
use crate::volume::{
    dilate_mask, erode_cuboid, valid_source_mask, BoolVolume, OcclusionMask, ShiftMap, TextureVolume,
    VideoVolume, Volume,
};

/// How erosion treats neighbours outside the volume.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BorderPolicy {
    /// Out-of-bounds neighbours count as inside the mask.
    Inside,
    /// Out-of-bounds neighbours count as outside the mask.
    Outside,
}

/// Erosion by the 3x3x3 cube.
pub fn erode(mask: &BoolVolume, policy: BorderPolicy) -> BoolVolume {
    erode_cuboid(mask, [1, 1, 1], policy == BorderPolicy::Inside)
}

/// The current shell `H' \ erode(H')`.
///
/// Erosion counts the outside of the volume as occluded, so a shell only
/// forms where the occlusion touches known voxels. If that yields nothing
/// (the occlusion has no known neighbour at all) the other policy is used.
pub fn onion_layer(current: &BoolVolume) -> BoolVolume {
    let layer = current.and_not(&erode(current, BorderPolicy::Inside));
    if layer.any() {
        layer
    } else {
        current.and_not(&erode(current, BorderPolicy::Outside))
    }
}

/// Output of [`onion_peel_init`].
#[derive(Clone, Debug)]
pub struct InitResult {
    pub u: VideoVolume,
    pub texture: Option<TextureVolume>,
    /// Shifts and recorded partial distances on `H̃`.
    pub field: AnnField,
    /// Number of shells peeled.
    pub layers: usize,
}

/// Fills every occluded voxel of a coarse level.
///
/// `phi` seeds the search; targets without a valid shift are randomised.
/// The shell `H̃ \ H` is matched first (against known voxels only) so that the
/// outermost layer has contributors.
pub fn onion_peel_init(
    u: &VideoVolume,
    texture: Option<&TextureVolume>,
    phi: ShiftMap,
    mask: &OcclusionMask,
    dparams: DistanceParams,
    sparams: SearchParams,
    mode: ReconstructionMode,
) -> Result<InitResult> {
    let dims = u.dims();
    mask.occluded.check_dims(dims)?;
    let mut u = u.clone();
    let mut texture = texture.cloned();
    let mut costs = Volume::filled(dims, f64::INFINITY);
    if !mask.occluded.any() {
        return Ok(InitResult {
            u,
            texture,
            field: AnnField { shifts: phi, costs },
            layers: 0,
        });
    }
    let sources = valid_source_mask(mask, dparams.shape);
    if !sources.any() {
        return Err(Error::EmptySourceSet { level: 0 });
    }
    let mut phi = phi;

    let shell = dilate_mask(mask, dparams.shape).and_not(&mask.occluded);
    let known = mask.known();
    {
        let cost = PatchCost::new(&u, texture.as_ref(), dparams).with_known(&known);
        let field = search(&cost, phi, &shell.indices(), &sources, sparams, derive_seed(TAG_INIT, &[0]))?;
        phi = field.shifts;
        for p in shell.indices() {
            costs[p] = field.costs[p];
        }
    }

    let data_mean = mean_over(&u, &known);
    let tex_mean = texture.as_ref().map(|t| mean_over(t, &known));
    let mut current = mask.occluded.clone();
    let mut layers = 0;
    while current.any() {
        layers += 1;
        let layer = onion_layer(&current);
        let targets = layer.indices();
        let known = current.or(&mask.invalid).not();
        let cost = PatchCost::new(&u, texture.as_ref(), dparams).with_known(&known);
        let salt = derive_seed(TAG_INIT, &[layers as u64]);
        let field = search(&cost, phi, &targets, &sources, sparams, salt)?;
        phi = field.shifts;
        for &p in &targets {
            costs[p] = field.costs[p];
        }
        let (nu, nt, deferred) = layer_reconstruct(
            &u,
            texture.as_ref(),
            &phi,
            &costs,
            &layer,
            &current,
            dparams.shape,
            mode,
        );
        let filled = if deferred.len() == targets.len() {
            // No voxel of the shell has a usable neighbour: fill each from its
            // known face neighbours so the peel still advances.
            for &p in &targets {
                u[p] = face_mean(&u, &known, p).unwrap_or(data_mean);
                if let (Some(t), Some(m)) = (texture.as_mut(), tex_mean) {
                    t[p] = face_mean(t, &known, p).unwrap_or(m);
                }
            }
            layer
        } else {
            u = nu;
            texture = nt;
            let mut filled = layer;
            for p in deferred {
                filled[p] = false;
            }
            filled
        };
        current = current.and_not(&filled);
    }

    Ok(InitResult {
        u,
        texture,
        field: AnnField { shifts: phi, costs },
        layers,
    })
}

fn mean_over<const C: usize>(v: &Volume<[f64; C]>, set: &BoolVolume) -> [f64; C] {
    let mut acc = [0.0; C];
    let mut n = 0.0;
    for i in set.indices() {
        for k in 0..C {
            acc[k] += v[i][k];
        }
        n += 1.0;
    }
    if n == 0.0 {
        acc
    } else {
        acc.map(|a| a / n)
    }
}

fn face_mean<const C: usize>(v: &Volume<[f64; C]>, known: &BoolVolume, p: usize) -> Option<[f64; C]> {
    let dims = v.dims();
    let mut acc = [0.0; C];
    let mut n = 0.0;
    for off in [[-1, 0, 0], [1, 0, 0], [0, -1, 0], [0, 1, 0], [0, 0, -1], [0, 0, 1]] {
        if let Some(q) = dims.offset(p, off) {
            if known[q] {
                for k in 0..C {
                    acc[k] += v[q][k];
                }
                n += 1.0;
            }
        }
    }
    (n > 0.0).then(|| acc.map(|a| a / n))
}
