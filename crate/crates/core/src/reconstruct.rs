//! Rebuilding colours and features from a shift map.
//!
//! Every voxel `q` of the (clipped) neighbourhood `N_p` whose shift is
//! defined proposes the value at `p + φ(q)`. The proposals are combined by a
//! weighted or plain mean, or the best-matching one is copied. Weights use
//! the recorded distance of each contributor, `costs[q] = d²(W_q, W_{q+φ(q)})`.
//! Reads come from the input and writes go to a fresh buffer, so the result
//! does not depend on the order in which voxels are visited.

use rayon::prelude::*;

use crate::volume::{BoolVolume, Dims, PatchShape, ShiftMap, TextureVolume, VideoVolume, Volume};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ReconstructionMode {
    /// Mean weighted by `exp(-d²/2σ²)` with `σ` the 75th percentile of `d`.
    #[default]
    Weighted,
    Unweighted,
    /// Copy from the contributor with the smallest distance.
    BestPatch,
}

/// Nearest-rank percentile of an ascending sequence.
pub fn nearest_rank(sorted: &[f64], pct: f64) -> f64 {
    assert!(!sorted.is_empty());
    let rank = ((pct / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

/// One contributing proposal for a voxel.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Contribution {
    /// Voxel whose value is proposed, `p + φ(q)`.
    pub source: usize,
    pub cost: f64,
}

/// Contributions to `p` in lexicographic order of `q`.
pub(crate) fn contributions(
    dims: Dims,
    p: usize,
    phi: &ShiftMap,
    costs: &Volume<f64>,
    shape: PatchShape,
    accept: &(impl Fn(usize) -> bool + ?Sized),
    out: &mut Vec<Contribution>,
) {
    out.clear();
    let v = dims.coords(p);
    let [hx, hy, ht] = shape.half().map(|h| h as i64);
    for dt in -ht..=ht {
        for dy in -hy..=hy {
            for dx in -hx..=hx {
                let (x, y, t) = (v.x as i64 + dx, v.y as i64 + dy, v.t as i64 + dt);
                if !dims.contains(x, y, t) {
                    continue;
                }
                let q = dims.index(x as usize, y as usize, t as usize);
                if !accept(q) || !costs[q].is_finite() {
                    continue;
                }
                let Some(s) = phi.get(q) else { continue };
                if let Some(source) = dims.offset(p, s.as_offset()) {
                    out.push(Contribution { source, cost: costs[q] });
                }
            }
        }
    }
}

/// Aggregation weights for `contribs`; `None` when there are none.
pub(crate) fn weights(contribs: &[Contribution], mode: ReconstructionMode) -> Option<Vec<f64>> {
    if contribs.is_empty() {
        return None;
    }
    Some(match mode {
        ReconstructionMode::Unweighted => vec![1.0; contribs.len()],
        ReconstructionMode::BestPatch => {
            // First strict minimum, i.e. the lexicographically smallest q on ties.
            let mut best = 0;
            for (i, c) in contribs.iter().enumerate() {
                if c.cost < contribs[best].cost {
                    best = i;
                }
            }
            let mut w = vec![0.0; contribs.len()];
            w[best] = 1.0;
            w
        }
        ReconstructionMode::Weighted => {
            let mut d: Vec<f64> = contribs.iter().map(|c| c.cost.max(0.0).sqrt()).collect();
            d.sort_by(f64::total_cmp);
            let sigma = nearest_rank(&d, 75.0);
            if sigma == 0.0 {
                contribs.iter().map(|c| if c.cost <= 0.0 { 1.0 } else { 0.0 }).collect()
            } else {
                let denom = 2.0 * sigma * sigma;
                contribs.iter().map(|c| (-c.cost.max(0.0) / denom).exp()).collect()
            }
        }
    })
}

fn combine<const C: usize>(vals: &[[f64; C]], contribs: &[Contribution], w: &[f64]) -> [f64; C] {
    let mut acc = [0.0; C];
    let mut total = 0.0;
    for (c, &wi) in contribs.iter().zip(w) {
        if wi == 0.0 {
            continue;
        }
        let v = &vals[c.source];
        for k in 0..C {
            acc[k] += wi * v[k];
        }
        total += wi;
    }
    acc.map(|a| a / total)
}

/// Reconstructs colours and, if given, features over `region`, using
/// contributors `q` for which `accept(q)` holds. Returns the new volumes and
/// the region voxels that had no contributor (left unchanged).
#[allow(clippy::too_many_arguments)]
pub(crate) fn reconstruct_with(
    u: &VideoVolume,
    texture: Option<&TextureVolume>,
    phi: &ShiftMap,
    costs: &Volume<f64>,
    region: &[usize],
    shape: PatchShape,
    mode: ReconstructionMode,
    accept: &(dyn Fn(usize) -> bool + Sync),
) -> (VideoVolume, Option<TextureVolume>, Vec<usize>) {
    let dims = u.dims();
    let results: Vec<Option<([f64; 3], [f64; 2])>> = region
        .par_iter()
        .map_init(Vec::new, |buf, &p| {
            contributions(dims, p, phi, costs, shape, accept, buf);
            let w = weights(buf, mode)?;
            let c = combine(u.data(), buf, &w);
            let t = texture.map(|t| combine(t.data(), buf, &w)).unwrap_or([0.0; 2]);
            Some((c, t))
        })
        .collect();
    let mut out_u = u.clone();
    let mut out_t = texture.cloned();
    let mut missing = Vec::new();
    for (&p, r) in region.iter().zip(results) {
        match r {
            Some((c, t)) => {
                out_u[p] = c;
                if let Some(ot) = out_t.as_mut() {
                    ot[p] = t;
                }
            }
            None => missing.push(p),
        }
    }
    (out_u, out_t, missing)
}

/// Colour reconstruction over `region`.
pub fn reconstruct_colors(
    u: &VideoVolume,
    phi: &ShiftMap,
    costs: &Volume<f64>,
    region: &BoolVolume,
    shape: PatchShape,
    mode: ReconstructionMode,
) -> VideoVolume {
    reconstruct_with(u, None, phi, costs, &region.indices(), shape, mode, &|_| true).0
}

/// Feature reconstruction with the same weights as the colours.
pub fn reconstruct_features(
    t: &TextureVolume,
    phi: &ShiftMap,
    costs: &Volume<f64>,
    region: &BoolVolume,
    shape: PatchShape,
    mode: ReconstructionMode,
) -> TextureVolume {
    let dims = t.dims();
    let region = region.indices();
    let results: Vec<Option<[f64; 2]>> = region
        .par_iter()
        .map_init(Vec::new, |buf, &p| {
            contributions(dims, p, phi, costs, shape, &|_| true, buf);
            let w = weights(buf, mode)?;
            Some(combine(t.data(), buf, &w))
        })
        .collect();
    let mut out = t.clone();
    for (&p, r) in region.iter().zip(results) {
        if let Some(v) = r {
            out[p] = v;
        }
    }
    out
}

/// Colours and features together, sharing one set of weights.
pub fn reconstruct(
    u: &VideoVolume,
    texture: Option<&TextureVolume>,
    phi: &ShiftMap,
    costs: &Volume<f64>,
    region: &BoolVolume,
    shape: PatchShape,
    mode: ReconstructionMode,
) -> (VideoVolume, Option<TextureVolume>) {
    let (u, t, _) = reconstruct_with(u, texture, phi, costs, &region.indices(), shape, mode, &|_| true);
    (u, t)
}

/// Best-patch pass over the occlusion `h`.
pub fn final_reconstruct(
    u: &VideoVolume,
    phi: &ShiftMap,
    costs: &Volume<f64>,
    h: &BoolVolume,
    shape: PatchShape,
) -> VideoVolume {
    reconstruct_colors(u, phi, costs, h, shape, ReconstructionMode::BestPatch)
}

/// Reconstruction of one onion layer: only contributors outside
/// `current_occlusion` are used. Returns the layer voxels that had none.
#[allow(clippy::too_many_arguments)]
pub fn layer_reconstruct(
    u: &VideoVolume,
    texture: Option<&TextureVolume>,
    phi: &ShiftMap,
    costs: &Volume<f64>,
    layer: &BoolVolume,
    current_occlusion: &BoolVolume,
    shape: PatchShape,
    mode: ReconstructionMode,
) -> (VideoVolume, Option<TextureVolume>, Vec<usize>) {
    let accept = |q: usize| !current_occlusion[q];
    reconstruct_with(u, texture, phi, costs, &layer.indices(), shape, mode, &accept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{Shift, Voxel};
    use rand::{Rng, SeedableRng};

    /// Single-voxel neighbourhoods make each contributor explicit.
    fn line(values: &[f64]) -> VideoVolume {
        Volume::from_fn(Dims::new(values.len(), 1, 1), |v| [values[v.x]; 3])
    }

    #[test]
    fn nearest_rank_percentile() {
        assert_eq!(nearest_rank(&[1.0, 2.0, 3.0, 4.0], 75.0), 3.0);
        assert_eq!(nearest_rank(&[5.0], 75.0), 5.0);
        assert_eq!(nearest_rank(&[1.0, 2.0, 3.0, 4.0, 5.0], 75.0), 4.0);
    }

    #[test]
    fn unweighted_two_contributors() {
        // p = 1 with neighbours 0..=2; q = 0 and q = 2 point to 100 and 200.
        let u = line(&[0.0, 0.0, 0.0, 100.0, 200.0, 0.0]);
        let d = u.dims();
        let mut phi = ShiftMap::new(d);
        phi.set(0, Shift::new(3, 0, 0)); // p + φ(0) = 4
        phi.set(2, Shift::new(1, 0, 0)); // p + φ(2) = 2
        let mut costs = Volume::filled(d, f64::INFINITY);
        costs[0] = 1.0;
        costs[2] = 1.0;
        // Contributions to p=1: from q=0 -> u[4]=200, from q=2 -> u[2]=0.
        let region = Volume::from_fn(d, |v| v.x == 1);
        let shape = PatchShape::new(3, 1, 1).unwrap();
        let out = reconstruct_colors(&u, &phi, &costs, &region, shape, ReconstructionMode::Unweighted);
        assert_eq!(out[1], [100.0; 3]);

        phi.set(2, Shift::new(2, 0, 0)); // now proposes u[3] = 100
        let out = reconstruct_colors(&u, &phi, &costs, &region, shape, ReconstructionMode::Unweighted);
        assert_eq!(out[1], [150.0; 3]);
    }

    #[test]
    fn constant_sources_give_the_constant_in_every_mode() {
        let d = Dims::new(10, 10, 3);
        let u = Volume::from_fn(d, |v| if v.x >= 5 { [42.0, 43.0, 44.0] } else { [0.0; 3] });
        let mut phi = ShiftMap::new(d);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut costs = Volume::filled(d, 0.0);
        for i in 0..d.len() {
            let v = d.coords(i);
            let tx = rng.random_range(6..9i32);
            phi.set(i, Shift::new(tx - v.x as i32, 0, 0));
            costs[i] = rng.random_range(0.0..10.0);
        }
        let region = Volume::from_fn(d, |v| (2..4).contains(&v.x) && (2..8).contains(&v.y) && v.t == 1);
        let shape = PatchShape::cube(3).unwrap();
        for mode in [ReconstructionMode::Weighted, ReconstructionMode::Unweighted, ReconstructionMode::BestPatch] {
            let out = reconstruct_colors(&u, &phi, &costs, &region, shape, mode);
            for p in region.indices() {
                for c in 0..3 {
                    assert!((out[p][c] - (42.0 + c as f64)).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn weighted_favours_the_zero_distance_contributor() {
        // Scalar evaluation: d = {0, 30}; σ = d at rank ceil(0.75*2) = 2 -> 30.
        // Weights 1 and exp(-900/1800) give the mixture below.
        let u = line(&[0.0, 0.0, 0.0, 100.0, 200.0, 0.0]);
        let d = u.dims();
        let mut phi = ShiftMap::new(d);
        phi.set(0, Shift::new(3, 0, 0));
        phi.set(2, Shift::new(2, 0, 0));
        let mut costs = Volume::filled(d, f64::INFINITY);
        costs[0] = 900.0;
        costs[2] = 0.0;
        let region = Volume::from_fn(d, |v| v.x == 1);
        let shape = PatchShape::new(3, 1, 1).unwrap();
        let out = reconstruct_colors(&u, &phi, &costs, &region, shape, ReconstructionMode::Weighted);
        let w = (-0.5f64).exp();
        let want = (100.0 + w * 200.0) / (1.0 + w);
        assert!((out[1][0] - want).abs() < 1e-9);

        // With three zero-distance contributors and one large one, σ = 0 by the
        // percentile rule and the result is exactly the zero-distance colour.
        let u = line(&[0.0, 0.0, 0.0, 0.0, 100.0, 200.0, 0.0, 0.0, 0.0]);
        let d = u.dims();
        let mut phi = ShiftMap::new(d);
        let mut costs = Volume::filled(d, f64::INFINITY);
        for q in 1..=4 {
            phi.set(q, Shift::new(2, 0, 0)); // p=2 -> 4 (100)
            costs[q] = 0.0;
        }
        phi.set(0, Shift::new(3, 0, 0)); // p=2 -> 5 (200)
        costs[0] = 1e6;
        let region = Volume::from_fn(d, |v| v.x == 2);
        let shape = PatchShape::new(5, 1, 1).unwrap();
        let out = reconstruct_colors(&u, &phi, &costs, &region, shape, ReconstructionMode::Weighted);
        assert!((out[2][0] - 100.0).abs() < 1e-6);
    }

    #[test]
    fn best_patch_ties_go_to_the_first_neighbour() {
        let u = line(&[0.0, 0.0, 0.0, 100.0, 200.0, 0.0]);
        let d = u.dims();
        let mut phi = ShiftMap::new(d);
        phi.set(0, Shift::new(3, 0, 0)); // -> 200
        phi.set(1, Shift::new(2, 0, 0)); // -> 100
        phi.set(2, Shift::new(2, 0, 0)); // -> 100
        let costs = Volume::filled(d, 5.0);
        let region = Volume::from_fn(d, |v| v.x == 1);
        let shape = PatchShape::new(3, 1, 1).unwrap();
        let out = final_reconstruct(&u, &phi, &costs, &region, shape);
        assert_eq!(out[1], [200.0; 3]);
        let mut costs = costs;
        costs[2] = 0.0;
        let out = final_reconstruct(&u, &phi, &costs, &region, shape);
        assert_eq!(out[1], [100.0; 3]);
    }

    fn random_instance(seed: u64) -> (VideoVolume, TextureVolume, ShiftMap, Volume<f64>, BoolVolume) {
        let d = Dims::new(9, 8, 5);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let u = Volume::from_fn(d, |_| [rng.random_range(0.0..255.0), rng.random_range(0.0..255.0), rng.random_range(0.0..255.0)]);
        let t = Volume::from_fn(d, |_| [rng.random_range(0.0..30.0), rng.random_range(0.0..30.0)]);
        let mut phi = ShiftMap::new(d);
        let mut costs = Volume::filled(d, f64::INFINITY);
        for i in 0..d.len() {
            if rng.random_bool(0.85) {
                let v = d.coords(i);
                let tx = rng.random_range(0..d.width) as i32 - v.x as i32;
                let ty = rng.random_range(0..d.height) as i32 - v.y as i32;
                let tt = rng.random_range(0..d.frames) as i32 - v.t as i32;
                phi.set(i, Shift::new(tx, ty, tt));
                costs[i] = rng.random_range(0.0..500.0);
            }
        }
        let region = Volume::from_fn(d, |_| rng.random_bool(0.3));
        (u, t, phi, costs, region)
    }

    /// Direct evaluation of the weighted mean, written independently.
    fn oracle<const C: usize>(
        vals: &Volume<[f64; C]>,
        phi: &ShiftMap,
        costs: &Volume<f64>,
        p: Voxel,
        half: i64,
        accept: impl Fn(usize) -> bool,
    ) -> Option<[f64; C]> {
        let d = vals.dims();
        let mut items = vec![];
        for dt in -half..=half {
            for dy in -half..=half {
                for dx in -half..=half {
                    let (x, y, t) = (p.x as i64 + dx, p.y as i64 + dy, p.t as i64 + dt);
                    if !d.contains(x, y, t) {
                        continue;
                    }
                    let q = d.index(x as usize, y as usize, t as usize);
                    let Some(s) = phi.get(q) else { continue };
                    if !accept(q) {
                        continue;
                    }
                    let (sx, sy, st) = (p.x as i64 + s.dx as i64, p.y as i64 + s.dy as i64, p.t as i64 + s.dt as i64);
                    if !d.contains(sx, sy, st) {
                        continue;
                    }
                    items.push((costs[q], *vals.at(sx as usize, sy as usize, st as usize)));
                }
            }
        }
        if items.is_empty() {
            return None;
        }
        let mut ds: Vec<f64> = items.iter().map(|(c, _)| c.sqrt()).collect();
        ds.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let idx = (0.75 * ds.len() as f64).ceil() as usize - 1;
        let sigma = ds[idx];
        let mut num = [0.0; C];
        let mut den = 0.0;
        for (c, v) in items {
            let s = if sigma == 0.0 {
                if c == 0.0 { 1.0 } else { 0.0 }
            } else {
                (-c / (2.0 * sigma * sigma)).exp()
            };
            for k in 0..C {
                num[k] += s * v[k];
            }
            den += s;
        }
        Some(num.map(|n| n / den))
    }

    #[test]
    fn weighted_matches_direct_formula() {
        for seed in 0..5 {
            let (u, t, phi, costs, region) = random_instance(seed);
            let shape = PatchShape::cube(3).unwrap();
            let (ou, ot) = reconstruct(&u, Some(&t), &phi, &costs, &region, shape, ReconstructionMode::Weighted);
            let ot = ot.unwrap();
            let of = reconstruct_features(&t, &phi, &costs, &region, shape, ReconstructionMode::Weighted);
            assert_eq!(of, ot);
            for i in 0..u.dims().len() {
                if !region[i] {
                    assert_eq!(ou[i], u[i]);
                    assert_eq!(ot[i], t[i]);
                    continue;
                }
                let p = u.dims().coords(i);
                match oracle(&u, &phi, &costs, p, 1, |_| true) {
                    Some(want) => {
                        for k in 0..3 {
                            assert!((ou[i][k] - want[k]).abs() < 1e-9);
                        }
                        let wt = oracle(&t, &phi, &costs, p, 1, |_| true).unwrap();
                        for k in 0..2 {
                            assert!((ot[i][k] - wt[k]).abs() < 1e-9);
                        }
                    }
                    None => assert_eq!(ou[i], u[i]),
                }
            }
        }
    }

    #[test]
    fn layer_reconstruction_matches_direct_formula() {
        for seed in 10..15 {
            let (u, t, phi, costs, layer) = random_instance(seed);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let occ = Volume::from_fn(u.dims(), |_| rng.random_bool(0.4)).or(&layer);
            let shape = PatchShape::cube(3).unwrap();
            let (ou, ot, deferred) =
                layer_reconstruct(&u, Some(&t), &phi, &costs, &layer, &occ, shape, ReconstructionMode::Weighted);
            let ot = ot.unwrap();
            for i in layer.indices() {
                let p = u.dims().coords(i);
                match oracle(&u, &phi, &costs, p, 1, |q| !occ[q]) {
                    Some(want) => {
                        for k in 0..3 {
                            assert!((ou[i][k] - want[k]).abs() < 1e-9);
                        }
                        let wt = oracle(&t, &phi, &costs, p, 1, |q| !occ[q]).unwrap();
                        assert!((ot[i][0] - wt[0]).abs() < 1e-9);
                    }
                    None => assert!(deferred.contains(&i)),
                }
            }
        }
    }

    #[test]
    fn layer_voxel_with_known_surroundings_matches_plain_reconstruction() {
        let (u, t, phi, costs, _) = random_instance(20);
        let d = u.dims();
        let p = d.index(4, 4, 2);
        let mut layer = Volume::filled(d, false);
        layer[p] = true;
        let shape = PatchShape::cube(3).unwrap();
        let (a, _, _) = layer_reconstruct(&u, Some(&t), &phi, &costs, &layer, &layer, shape, ReconstructionMode::Weighted);
        // p itself is excluded as a contributor in the layer variant.
        let mut phi2 = phi.clone();
        phi2.clear(p);
        let b = reconstruct_colors(&u, &phi2, &costs, &layer, shape, ReconstructionMode::Weighted);
        assert_eq!(a[p], b[p]);
    }

    #[test]
    fn single_contributor_is_copied() {
        let (u, t, _, _, _) = random_instance(30);
        let d = u.dims();
        let p = d.index(4, 4, 2);
        let mut phi = ShiftMap::new(d);
        phi.set(d.index(3, 4, 2), Shift::new(2, 1, 1));
        let costs = Volume::filled(d, 7.0);
        let mut region = Volume::filled(d, false);
        region[p] = true;
        let shape = PatchShape::cube(3).unwrap();
        for mode in [ReconstructionMode::Weighted, ReconstructionMode::Unweighted, ReconstructionMode::BestPatch] {
            let (ou, ot) = reconstruct(&u, Some(&t), &phi, &costs, &region, shape, mode);
            assert_eq!(ou[p], u[d.index(6, 5, 3)]);
            assert_eq!(ot.unwrap()[p], t[d.index(6, 5, 3)]);
        }
    }

    #[test]
    fn results_are_convex_and_best_patch_copies() {
        for seed in 40..45 {
            let (u, _, phi, costs, region) = random_instance(seed);
            let shape = PatchShape::cube(3).unwrap();
            let d = u.dims();
            for mode in [ReconstructionMode::Weighted, ReconstructionMode::Unweighted] {
                let out = reconstruct_colors(&u, &phi, &costs, &region, shape, mode);
                let mut buf = vec![];
                for p in region.indices() {
                    contributions(d, p, &phi, &costs, shape, &|_| true, &mut buf);
                    if buf.is_empty() {
                        continue;
                    }
                    for k in 0..3 {
                        let lo = buf.iter().map(|c| u[c.source][k]).fold(f64::INFINITY, f64::min);
                        let hi = buf.iter().map(|c| u[c.source][k]).fold(f64::NEG_INFINITY, f64::max);
                        assert!(out[p][k] >= lo - 1e-9 && out[p][k] <= hi + 1e-9);
                    }
                }
            }
            let out = final_reconstruct(&u, &phi, &costs, &region, shape);
            for p in region.indices() {
                assert!(u.data().contains(&out[p]));
            }
        }
    }
}
