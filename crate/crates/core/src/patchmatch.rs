//! Spatio-temporal PatchMatch and an exhaustive nearest-neighbour oracle.

use rand::Rng;
use rayon::prelude::*;

use crate::distance::{DistanceParams, PatchCost, PatchWindow};
use crate::error::{Error, Result};
use crate::rng::{stream, TAG_INIT, TAG_SEARCH};
use crate::volume::{BoolVolume, Shift, ShiftMap, TextureVolume, VideoVolume, Volume};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SearchParams {
    pub iterations: usize,
    /// Reduction factor of the random-search window, in `(0, 1)`.
    pub rho: f64,
    /// Largest random-search radius; `None` uses the largest volume extent.
    pub r_max: Option<usize>,
    pub seed: u64,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self {
            iterations: 10,
            rho: 0.5,
            r_max: None,
            seed: 0,
        }
    }
}

impl SearchParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::Config(format!("rho must lie in (0, 1), got {}", self.rho)));
        }
        if self.iterations == 0 {
            return Err(Error::Config("PatchMatch needs at least one iteration".into()));
        }
        if self.r_max == Some(0) {
            return Err(Error::Config("r_max must be at least 1".into()));
        }
        Ok(())
    }
}

/// A shift map together with the distance recorded for each target.
///
/// `costs` holds `d²(W_p, W_{p+φ(p)})` for every target and `+inf` elsewhere.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnField {
    pub shifts: ShiftMap,
    pub costs: Volume<f64>,
}

/// Random-search offset `⌊r_max ρ^k δ⌋`.
pub fn search_offset(r_max: f64, rho: f64, k: u32, delta: [f64; 3]) -> [i64; 3] {
    let r = r_max * rho.powi(k as i32);
    delta.map(|d| (r * d).floor() as i64)
}

/// Assigns every target a shift to a uniformly drawn voxel of `sources`.
pub fn random_init(targets: &BoolVolume, sources: &BoolVolume, seed: u64) -> Result<ShiftMap> {
    let mut phi = ShiftMap::new(targets.dims());
    randomise(&mut phi, &targets.indices(), sources, seed, 0)?;
    Ok(phi)
}

pub(crate) fn randomise(
    phi: &mut ShiftMap,
    targets: &[usize],
    sources: &BoolVolume,
    seed: u64,
    salt: u64,
) -> Result<()> {
    let src = sources.indices();
    if src.is_empty() {
        return Err(Error::EmptySourceSet { level: 0 });
    }
    let dims = phi.dims();
    for &p in targets {
        let mut rng = stream(seed, &[TAG_INIT, salt, p as u64]);
        let q = src[rng.random_range(0..src.len())];
        phi.set(p, Shift::between(dims, p, q));
    }
    Ok(())
}

/// Runs PatchMatch on `targets` starting from `phi`.
///
/// Targets whose input shift does not land in `sources` are first given a
/// random valid shift; afterwards no target's distance ever increases.
pub fn ann_search(
    u: &VideoVolume,
    texture: Option<&TextureVolume>,
    phi: ShiftMap,
    targets: &BoolVolume,
    sources: &BoolVolume,
    dparams: DistanceParams,
    sparams: SearchParams,
) -> Result<AnnField> {
    let cost = PatchCost::new(u, texture, dparams);
    search(&cost, phi, &targets.indices(), sources, sparams, 0)
}

/// PatchMatch with an arbitrary cost context; `salt` separates random streams
/// of different calls sharing one seed.
pub fn search(
    cost: &PatchCost<'_>,
    mut phi: ShiftMap,
    targets: &[usize],
    sources: &BoolVolume,
    sparams: SearchParams,
    salt: u64,
) -> Result<AnnField> {
    sparams.validate()?;
    let dims = cost.video().dims();
    assert_eq!(phi.dims(), dims);
    assert_eq!(sources.dims(), dims);
    if !sources.any() {
        return Err(Error::EmptySourceSet { level: 0 });
    }
    let invalid: Vec<usize> = targets
        .iter()
        .copied()
        .filter(|&p| !phi.target(p).is_some_and(|q| sources[q]))
        .collect();
    randomise(&mut phi, &invalid, sources, sparams.seed, salt ^ TAG_SEARCH)?;

    let windows: Vec<PatchWindow> = targets.par_iter().map(|&p| cost.window(p)).collect();
    let mut costs = Volume::filled(dims, f64::INFINITY);
    let init: Vec<f64> = targets
        .par_iter()
        .zip(&windows)
        .map(|(&p, w)| {
            if w.count() == 0 {
                f64::INFINITY
            } else {
                cost.cost(p, phi.target(p).unwrap(), w)
            }
        })
        .collect();
    for (&p, c) in targets.iter().zip(init) {
        costs[p] = c;
    }

    let r_max = sparams
        .r_max
        .unwrap_or(dims.width.max(dims.height).max(dims.frames)) as f64;
    for it in 0..sparams.iterations {
        propagate(cost, &mut phi, &mut costs, targets, &windows, sources, it % 2 == 1);
        random_search(cost, &mut phi, &mut costs, targets, &windows, sources, sparams, r_max, salt, it);
    }
    Ok(AnnField { shifts: phi, costs })
}

#[inline]
fn try_candidate(
    cost: &PatchCost<'_>,
    p: usize,
    w: &PatchWindow,
    shift: Shift,
    sources: &BoolVolume,
    best: f64,
) -> Option<f64> {
    let q = sources.dims().offset(p, shift.as_offset())?;
    if !sources[q] {
        return None;
    }
    let c = cost.cost_bounded(p, q, w, best);
    (c < best).then_some(c)
}

fn propagate(
    cost: &PatchCost<'_>,
    phi: &mut ShiftMap,
    costs: &mut Volume<f64>,
    targets: &[usize],
    windows: &[PatchWindow],
    sources: &BoolVolume,
    reverse: bool,
) {
    let dims = phi.dims();
    let step: i64 = if reverse { 1 } else { -1 };
    let neighbours = [[step, 0, 0], [0, step, 0], [0, 0, step]];
    let mut visit = |k: usize| {
        let p = targets[k];
        let w = &windows[k];
        if w.count() == 0 {
            return;
        }
        let mut best = costs[p];
        let mut current = phi.get(p);
        for off in neighbours {
            let Some(n) = dims.offset(p, off) else { continue };
            let Some(s) = phi.get(n) else { continue };
            if Some(s) == current {
                continue;
            }
            if let Some(c) = try_candidate(cost, p, w, s, sources, best) {
                best = c;
                current = Some(s);
            }
        }
        if let Some(s) = current {
            phi.set(p, s);
        }
        costs[p] = best;
    };
    if reverse {
        (0..targets.len()).rev().for_each(&mut visit);
    } else {
        (0..targets.len()).for_each(&mut visit);
    }
}

#[allow(clippy::too_many_arguments)]
fn random_search(
    cost: &PatchCost<'_>,
    phi: &mut ShiftMap,
    costs: &mut Volume<f64>,
    targets: &[usize],
    windows: &[PatchWindow],
    sources: &BoolVolume,
    sparams: SearchParams,
    r_max: f64,
    salt: u64,
    iteration: usize,
) {
    let phi_ref = &*phi;
    let costs_ref = &*costs;
    let updates: Vec<Option<(Shift, f64)>> = targets
        .par_iter()
        .zip(windows)
        .map(|(&p, w)| {
            if w.count() == 0 {
                return None;
            }
            let base = phi_ref.get(p)?;
            let mut best = costs_ref[p];
            let mut found = None;
            let mut rng = stream(sparams.seed, &[TAG_SEARCH, salt, iteration as u64, p as u64]);
            let mut k = 1u32;
            while (r_max * sparams.rho.powi(k as i32)).floor() >= 1.0 {
                let delta = [
                    rng.random_range(-1.0..=1.0),
                    rng.random_range(-1.0..=1.0),
                    rng.random_range(-1.0..=1.0),
                ];
                let [ox, oy, ot] = search_offset(r_max, sparams.rho, k, delta);
                let s = Shift::new(base.dx + ox as i32, base.dy + oy as i32, base.dt + ot as i32);
                if let Some(c) = try_candidate(cost, p, w, s, sources, best) {
                    best = c;
                    found = Some((s, c));
                }
                k += 1;
            }
            found
        })
        .collect();
    for (&p, u) in targets.iter().zip(updates) {
        if let Some((s, c)) = u {
            phi.set(p, s);
            costs[p] = c;
        }
    }
}

/// Exact nearest neighbour of every target over all of `sources`; ties go
/// to the lexicographically smallest source.
pub fn brute_force_nn(
    u: &VideoVolume,
    texture: Option<&TextureVolume>,
    targets: &BoolVolume,
    sources: &BoolVolume,
    dparams: DistanceParams,
) -> Result<AnnField> {
    let cost = PatchCost::new(u, texture, dparams);
    brute_force_with(&cost, &targets.indices(), sources)
}

pub fn brute_force_with(cost: &PatchCost<'_>, targets: &[usize], sources: &BoolVolume) -> Result<AnnField> {
    let dims = cost.video().dims();
    let src = sources.indices();
    if src.is_empty() {
        return Err(Error::EmptySourceSet { level: 0 });
    }
    let best: Vec<(usize, f64)> = targets
        .par_iter()
        .map(|&p| {
            let w = cost.window(p);
            let mut best = (src[0], f64::INFINITY);
            if w.count() == 0 {
                return best;
            }
            for &q in &src {
                let c = cost.cost_bounded(p, q, &w, best.1);
                if c < best.1 {
                    best = (q, c);
                }
            }
            best
        })
        .collect();
    let mut shifts = ShiftMap::new(dims);
    let mut costs = Volume::filled(dims, f64::INFINITY);
    for (&p, (q, c)) in targets.iter().zip(best) {
        shifts.set(p, Shift::between(dims, p, q));
        costs[p] = c;
    }
    Ok(AnnField { shifts, costs })
}

/// Recorded distances of `phi` on `targets` (`+inf` elsewhere).
pub fn shift_costs(cost: &PatchCost<'_>, phi: &ShiftMap, targets: &[usize]) -> Volume<f64> {
    let dims = cost.video().dims();
    let vals: Vec<f64> = targets
        .par_iter()
        .map(|&p| {
            let w = cost.window(p);
            match phi.target(p) {
                Some(q) if w.count() > 0 => cost.cost(p, q, &w),
                _ => f64::INFINITY,
            }
        })
        .collect();
    let mut out = Volume::filled(dims, f64::INFINITY);
    for (&p, c) in targets.iter().zip(vals) {
        out[p] = c;
    }
    out
}
